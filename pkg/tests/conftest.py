import numpy as np
import pytest

from polylr import ConstraintSpec, Polynomial, build_basis


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tilt_constraints(mu: float) -> ConstraintSpec:
    b = build_basis(1, 1)
    return ConstraintSpec(((Polynomial.constant(b), 1.0),
                           (Polynomial.from_terms(b, {1: 1.0}), mu)))


def tilt_closed_form(mu: float) -> np.ndarray:
    r = np.sqrt(1 - mu * mu)
    return np.array([0.5 * (1 + r), mu, 0.5 * (1 - r)])


def random_feasible_problem(rng, d: int, n: int, n_eq: int = 2, n_ineq: int = 1,
                            weight: str = "empirical"):
    """A random program with a strictly feasible point built in."""
    from polylr import ConicProblem, Empirical, StdGaussian, moment_matrix_for, structure_for
    from polylr import RealLine, RealSpace
    from polylr.sos_cones import assemble_coeffs, selection_maps

    basis = build_basis(d, n)
    if weight == "gaussian" and d == 1:
        H = moment_matrix_for(StdGaussian(), basis)
    else:
        H = moment_matrix_for(Empirical(rng.standard_normal((6 * basis.size, d))), basis)
    dom = RealLine() if d == 1 else RealSpace(d)
    s = structure_for(dom, n)
    maps = selection_maps(s, basis)
    grams = []
    for blk in s.blocks:
        A = rng.standard_normal((blk.gram_size, blk.gram_size))
        grams.append(A @ A.T / blk.gram_size + 0.1 * np.eye(blk.gram_size))
    x0 = assemble_coeffs(maps, grams)
    S = np.zeros((n_eq, basis.size))
    S[0, 0] = 1.0
    if n_eq > 1:
        S[1:] = rng.standard_normal((n_eq - 1, basis.size))
    U = rng.standard_normal((n_ineq, basis.size))
    Hx = H.entries @ x0
    c = S @ Hx
    dvec = U @ Hx + rng.uniform(0.0, 0.5, n_ineq)
    return ConicProblem(H, S, c, U, dvec, sos=s, maps=maps)


# -- acceptance reporting ----------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
