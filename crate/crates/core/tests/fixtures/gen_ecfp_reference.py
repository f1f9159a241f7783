"""Regenerates ecfp_reference.tsv and tanimoto_reference.tsv with RDKit.

Run from this directory: python3 gen_ecfp_reference.py
"""
from rdkit import Chem, DataStructs
from rdkit.Chem import rdFingerprintGenerator as fpgen

CORPUS = [
    ("benzene", "c1ccccc1"),
    ("ethanol", "CCO"),
    ("aspirin", "CC(=O)Oc1ccccc1C(=O)O"),
    ("caffeine", "Cn1cnc2c1c(=O)n(C)c(=O)n2C"),
    ("ibuprofen", "CC(C)Cc1ccc(cc1)C(C)C(=O)O"),
    ("paracetamol", "CC(=O)Nc1ccc(O)cc1"),
    ("naphthalene", "c1ccc2ccccc2c1"),
    ("pyridine", "c1ccncc1"),
    ("indole", "c1ccc2[nH]ccc2c1"),
    ("dopamine", "C1=CC(=C(C=C1CCN)O)O"),
    ("nicotine", "CN1CCCC1c1cccnc1"),
    ("chloroquine", "CCN(CC)CCCC(C)Nc1ccnc2cc(Cl)ccc12"),
    ("glycine_zwitterion", "[NH3+]CC(=O)[O-]"),
    ("sodium_acetate", "CC(=O)[O-].[Na+]"),
    ("acetonitrile", "CC#N"),
    ("cyclohexane", "C1CCCCC1"),
    ("thiophene", "c1ccsc1"),
    ("metformin", "CN(C)C(=N)NC(=N)N"),
    ("diazepam", "CN1C(=O)CN=C(c2ccccc2)c2cc(Cl)ccc21"),
    ("sertraline", "CN[C@H]1CC[C@@H](c2ccc(Cl)c(Cl)c2)c2ccccc21"),
]

EXTRA = [
    ("toluene_kekule", "CC1=CC=CC=C1"),
    ("caffeine_kekule", "CN1C=NC2=C1C(=O)N(C(=O)N2C)C"),
    ("furan", "o1cccc1"),
    ("nitrobenzene", "O=[N+]([O-])c1ccccc1"),
    ("sulfamethoxazole", "Cc1cc(NS(=O)(=O)c2ccc(N)cc2)no1"),
    ("trifluorotoluene", "FC(F)(F)c1ccccc1"),
    ("cyclopropane_pct", "C%10CC%10"),
    ("naphthalene_kekule", "C1=CC=C2C=CC=CC2=C1"),
    ("pyrrole_kekule", "C1=CNC=C1"),
    ("pyridine_kekule", "C1=CC=NC=C1"),
    ("biphenyl", "c1ccc(cc1)-c1ccccc1"),
    ("methane", "C"),
    ("ethane", "CC"),
    ("butane", "CCCC"),
    ("hexane", "CCCCCC"),
    ("cubane", "C12C3C4C1C5C2C3C45"),
    ("acetic_acid", "CC(=O)O"),
    ("pyridone", "O=c1cccc[nH]1"),
    ("imidazole", "c1c[nH]cn1"),
    ("cyclohexene", "C1=CCCCC1"),
    ("phenol_kekule", "OC1=CC=CC=C1"),
    ("quinoline_kekule", "C1=CC=C2N=CC=CC2=C1"),
    ("benzoate", "[O-]C(=O)c1ccccc1"),
    ("ammonium", "[NH4+]"),
    ("chlorobenzene", "Clc1ccccc1"),
    ("dmso", "CS(C)=O"),
    ("phosphate", "OP(=O)(O)O"),
    ("bromoform", "BrC(Br)Br"),
    ("ethylene", "C=C"),
    ("acetylene", "C#C"),
    ("stereo_alkene", "F/C=C/F"),
    ("spiro", "C1CCC2(CC1)CCCC2"),
]


def gen(radius, size=2048):
    return fpgen.GetMorganGenerator(radius=radius, fpSize=size)


def main():
    g2 = gen(2)
    g1 = gen(1)
    g0 = gen(0)
    g3 = gen(3)
    rows = []
    fps = []
    with open("ecfp_reference.tsv", "w") as out:
        out.write("set\tname\tsmiles\tatoms\tbonds\tbits2048_r2\tids_r0\tids_r1\tids_r2\tids_r3\n")
        for tag, corpus in (("core", CORPUS), ("extra", EXTRA)):
            for name, smi in corpus:
                mol = Chem.MolFromSmiles(smi)
                fp = g2.GetFingerprint(mol)
                ids = []
                for g in (g0, g1, g2, g3):
                    ids.append(",".join(str(k) for k in sorted(
                        g.GetSparseCountFingerprint(mol).GetNonzeroElements())))
                out.write("\t".join([tag, name, smi, str(mol.GetNumAtoms()),
                                     str(mol.GetNumBonds()), str(fp.GetNumOnBits())] + ids) + "\n")
                if tag == "core":
                    fps.append((name, fp))
    with open("tanimoto_reference.tsv", "w") as out:
        out.write("a\tb\ttanimoto\n")
        for i, (na, fa) in enumerate(fps):
            for nb, fb in fps[i + 1:]:
                out.write(f"{na}\t{nb}\t{DataStructs.TanimotoSimilarity(fa, fb):.17g}\n")


if __name__ == "__main__":
    main()
