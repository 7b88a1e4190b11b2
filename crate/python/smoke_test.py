"""Quick end-to-end check of the Python bindings on H2 in a minimal basis."""

import math
import pathlib
import sys

import bfvmc

FIXTURES = pathlib.Path(__file__).resolve().parents[1] / "crates" / "core" / "tests" / "fixtures"


def main():
    ints = bfvmc.Integrals.from_file(str(FIXTURES / "h2_sto3g.fcidump"))
    assert (ints.n_orb, ints.n_elec, ints.ms2) == (2, 2, 0), ints

    again = bfvmc.Integrals.from_string(ints.to_fcidump())
    assert again.eri(0, 0, 1, 1) == ints.eri(0, 0, 1, 1)

    configs = bfvmc.sector_configs(2, 2, 0)
    assert len(configs) == 4, configs

    (e0, coeffs), = ints.exact_states()
    print(f"exact ground state {e0:.10f}")

    # The exact state has a constant local energy.
    mean, stderr, values = bfvmc.local_energy(ints, coeffs, ["1100", "0011"])
    assert abs(mean - e0) < 1e-10 and stderr < 1e-10, (mean, stderr)
    s2, _ = bfvmc.spin_expectation(coeffs, ["1100", "0011"], 4)
    assert abs(s2) < 1e-10, s2

    net = bfvmc.BackflowNet(4, 2, seed=3, t=2, d_f=8, n_layers=1, n_heads=2,
                            d_atten=8, mlp_layers=1, d_mlp=8, n_dets=2)
    sign, log_abs = net.amplitude("1100")
    assert sign in (-1.0, 1.0) and math.isfinite(log_abs)
    assert len(net.log_grad("1100")) == net.n_params
    err = net.check_gradients(configs)
    print(f"{net.n_params} parameters, gradient check {err:.2e}")
    assert err < 1e-5

    clone = bfvmc.BackflowNet.from_checkpoint(net.to_checkpoint())
    assert clone.params == net.params

    samples = bfvmc.sample(ints, net, seed=1, batch_size=256, n_chains=16)
    assert len(samples) == 256 and set(samples) <= set(configs)
    mean, stderr, _ = bfvmc.local_energy(ints, net, samples)
    print(f"random network energy {mean:.6f} +- {stderr:.1e}")
    assert mean > e0 - 3 * stderr - 1e-10

    fit = bfvmc.yamaguchi_j([(-1.0, 0.0), (-0.998, 2.0)])
    assert abs(fit["j_hartree"] - 1e-3) < 1e-12, fit
    print("ok")


if __name__ == "__main__":
    sys.exit(main())
