"""Independent reference values for the test suite.

Evaluates the closed-form model expressions directly from the preset TOML
with mpmath at 30 digits, without importing the package. The printed numbers
are frozen into the tests; rerun this script if a preset changes.

    python3 tests/oracles/derive_values.py
"""
from pathlib import Path

import mpmath as mp

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

mp.mp.dps = 30
PRESETS = Path(__file__).resolve().parents[2] / "src" / "spmedoe" / "presets"


def load(name):
    return tomllib.loads((PRESETS / f"{name}.toml").read_text())


def m(x):
    return mp.mpf(repr(x)) if isinstance(x, float) else mp.mpf(x)


def up_rational(th, f):
    f = [m(v) for v in f]
    num = sum(f[i] * th ** (2 * i) for i in range(6))
    den = sum(f[6 + i] * th ** (2 * i) for i in range(6))
    return num / den


def un_composite(th, g):
    g = [m(v) for v in g]
    return (g[0] + g[1] * th + g[2] * mp.sqrt(th) + g[3] / th + g[4] / th ** mp.mpf(1.5)
            + g[5] * mp.e ** (g[6] + g[7] * th) + g[8] * mp.e ** (g[9] * th + g[10]))


def kappa(ce, h):
    s = m(ce) / 1000
    return sum(m(hk) * s ** k for k, hk in enumerate(h))


class Cell:
    def __init__(self, d):
        c = d["cell"]
        self.F, self.R, self.T = m(c["faraday_constant"]), m(c["gas_constant"]), m(c["temperature"])
        self.A = m(c["electrode_area"])
        self.Rp, self.Rn = m(c["Rp_p"]), m(c["Rp_n"])
        self.Lp, self.Ls, self.Ln = m(c["L_p"]), m(c["L_s"]), m(c["L_n"])
        self.ep, self.es, self.en = m(c["eps_p"]), m(c["eps_s"]), m(c["eps_n"])
        self.ap = 3 * (1 - m(c["epsf_p"]) - self.ep) / self.Rp
        self.an = 3 * (1 - m(c["epsf_n"]) - self.en) / self.Rn
        self.cmp, self.cmn = m(c["cmax_p"]), m(c["cmax_n"])
        self.h = c["kappa_coeffs"]
        self.f = c["ocp_positive"]["coeffs"]
        self.g = c["ocp_negative"]["coeffs"]
        self.n = c["n_el"]
        self.one_c = m(c["one_c_current"])
        self.par = {k: m(v) for k, v in d["parameters"]["true"].items() if not isinstance(v, dict)}


def surface(cell, x, I):
    P = cell.par
    csp = x[0] + 8 * cell.Rp / 35 * x[2] + cell.Rp / (35 * P["Dsp"]) * I / (cell.F * cell.A * cell.Lp * cell.ap)
    csn = x[1] + 8 * cell.Rn / 35 * x[3] - cell.Rn / (35 * P["Dsn"]) * I / (cell.F * cell.A * cell.Ln * cell.an)
    return csp, csn


def potential_drop(cell, ce, I):
    P, n = cell.par, cell.n
    means = [mp.fsum(ce[k * n:(k + 1) * n]) / n for k in range(3)]
    keff = [e ** P["p"] * kappa(c, cell.h) for e, c in zip((cell.ep, cell.es, cell.en), means)]
    # linear extrapolation from the two outermost centres to each collector face
    c0 = ce[0] + (ce[0] - ce[1]) / 2
    cL = ce[-1] + (ce[-1] - ce[-2]) / 2
    ohm = -I / (2 * cell.A) * (cell.Lp / keff[0] + 2 * cell.Ls / keff[1] + cell.Ln / keff[2])
    return ohm + 2 * cell.R * cell.T / cell.F * (1 - P["t_plus"]) * mp.log(c0 / cL), means


def voltage(cell, x, I):
    P = cell.par
    csp, csn = surface(cell, x, I)
    dphi, means = potential_drop(cell, x[4:], I)
    beta = 2 * cell.R * cell.T / cell.F
    i0p = P["kp"] * mp.sqrt(means[0] * csp * (cell.cmp - csp))
    i0n = P["kn"] * mp.sqrt(means[2] * csn * (cell.cmn - csn))
    eta_p = beta * mp.asinh(-I / (2 * cell.A * cell.F * cell.Lp * cell.ap * i0p))
    eta_n = beta * mp.asinh(I / (2 * cell.A * cell.F * cell.Ln * cell.an * i0n))
    return up_rational(csp / cell.cmp, cell.f) - un_composite(csn / cell.cmn, cell.g) + dphi + eta_p - eta_n


def stored_state(n):
    """Non-uniform reference state used by several tests."""
    ce = [m(2000) + 150 * mp.cos(mp.pi * k / (3 * n - 1)) + 7 * k % 5 for k in range(3 * n)]
    return [m(30000), m(20000), m("-1.5e6"), m("4.0e7")] + ce


def main():
    comp = Cell(load("companion"))
    paper = Cell(load("paper"))
    print("U_p(0.5) rational          ", mp.nstr(up_rational(mp.mpf("0.5"), comp.f), 17))
    print("U_p(0) rational            ", mp.nstr(up_rational(mp.mpf(0), comp.f), 17))
    print("U_n(1) composite           ", mp.nstr(un_composite(mp.mpf(1), comp.g), 17))

    I = paper.one_c
    x_eq = [m(25545), m(26128), m(0), m(0)] + [m(2000)] * (3 * paper.n)
    csp, csn = surface(paper, x_eq, I)
    print("c_s,p at 1C, x0 [mol/m3]   ", mp.nstr(csp, 17))
    print("c_s,n at 1C, x0 [mol/m3]   ", mp.nstr(csn, 17))
    print("d cavg_p/dt at 1C          ", mp.nstr(3 * I / (paper.Rp * paper.F * paper.A * paper.Lp * paper.ap), 17))

    x = stored_state(paper.n)
    print("stored ce                  ", [mp.nstr(v, 17) for v in x[4:]][:3], "...")
    print("dPhi_e(stored, 0.7C)       ", mp.nstr(potential_drop(paper, x[4:], I * mp.mpf("0.7"))[0], 17))
    print("V(stored, 0.7C)            ", mp.nstr(voltage(paper, x, I * mp.mpf("0.7")), 17))
    print("V(x0, 0)                   ", mp.nstr(voltage(paper, x_eq, 0), 17))
    print("V(x0, 1C)                  ", mp.nstr(voltage(paper, x_eq, I), 17))

    # multisine: bias 0.5C, amplitude 0.25C, 20 mHz and 5 mHz
    t = mp.mpf("12.5")
    i_ms = I * (mp.mpf("0.25") * (mp.sin(2 * mp.pi * mp.mpf("0.02") * t) + mp.sin(2 * mp.pi * mp.mpf("0.005") * t))
                + mp.mpf("0.5"))
    print("multisine(12.5 s) [A]      ", mp.nstr(i_ms, 17))


if __name__ == "__main__":
    main()
