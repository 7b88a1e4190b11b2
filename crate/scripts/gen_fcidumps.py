"""Regenerate the FCIDUMP fixtures under crates/core/tests/fixtures/.

H2 and H4 integrals come from a restricted Hartree-Fock run in PySCF
(STO-3G, canonical MOs). The Hubbard lattices are written directly.
pyscf_fci.json holds PySCF's own FCI energies for each file, read back
from the written FCIDUMP, as an external check on the Rust solver.

    python3 scripts/gen_fcidumps.py
"""
import json
import os

import numpy as np
from pyscf import ao2mo, fci, gto, scf
from pyscf.tools import fcidump

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "..", "crates", "core", "tests", "fixtures")


def molecular(name, atom):
    mol = gto.M(atom=atom, basis="sto-3g", unit="Angstrom", verbose=0)
    mf = scf.RHF(mol)
    mf.conv_tol = 1e-12
    mf.kernel()
    fcidump.from_scf(mf, os.path.join(OUT, name), tol=1e-14)


def hubbard(name, n_sites, bonds, t, u, n_elec):
    h1 = np.zeros((n_sites, n_sites))
    for i, j in bonds:
        h1[i, j] = h1[j, i] = -t
    eri = np.zeros((n_sites,) * 4)
    for i in range(n_sites):
        eri[i, i, i, i] = u
    eri = ao2mo.restore(8, eri, n_sites)
    fcidump.from_integrals(
        os.path.join(OUT, name), h1, eri, n_sites, n_elec, nuc=0.0, ms=0, tol=1e-14
    )


def reference(name):
    data = fcidump.read(os.path.join(OUT, name))
    norb, ecore = data["NORB"], data["ECORE"]
    h1, eri = data["H1"], ao2mo.restore(1, data["H2"], norb)
    out = {}
    nelec = data["NELEC"]
    for two_sz in (0, 2):
        na, nb = (nelec + two_sz) // 2, (nelec - two_sz) // 2
        if na > norb:
            continue
        solver = fci.direct_spin1.FCI()
        solver.conv_tol = 1e-14
        e, _ = solver.kernel(h1, eri, norb, (na, nb), ecore=ecore)
        out[str(two_sz)] = e
    return out


if __name__ == "__main__":
    molecular("h2_sto3g.fcidump", "H 0 0 0; H 0 0 0.7414")
    molecular("h4_chain.fcidump", "H 0 0 0; H 0 0 1.0; H 0 0 2.0; H 0 0 3.0")
    # 2x2 plaquette with open boundaries: a 4-site ring 0-1-3-2-0.
    hubbard("hubbard_2x2_u4.fcidump", 4, [(0, 1), (1, 3), (3, 2), (2, 0)], 1.0, 4.0, 4)
    # Two sites far in the strong-coupling limit: a stretched-H2 analogue.
    hubbard("hubbard_dimer_u1e4.fcidump", 2, [(0, 1)], 1.0, 1.0e4, 2)
    refs = {
        name: reference(name)
        for name in (
            "h2_sto3g.fcidump",
            "h4_chain.fcidump",
            "hubbard_2x2_u4.fcidump",
            "hubbard_dimer_u1e4.fcidump",
        )
    }
    with open(os.path.join(OUT, "pyscf_fci.json"), "w") as f:
        json.dump(refs, f, indent=2, sort_keys=True)
        f.write("\n")
