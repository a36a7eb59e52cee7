"""Regenerate the bundled desk-scale fixtures in src/psl/fixtures/.

Deterministic: every random choice comes from ``random.Random(SEED)``.
The golden pruning file is produced by the independent oracle in
tests/oracles.py, not by the package.

    python3 tools/make_fixtures.py
"""

from __future__ import annotations

import csv
import io
import json
import random
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "src" / "psl" / "fixtures"
sys.path.insert(0, str(ROOT / "src"))
sys.path.insert(0, str(ROOT / "tests"))

import oracles  # noqa: E402
from psl.llm_gateway import prompt_key  # noqa: E402
from psl.qa_forge import DESCRIPTIVE_OPENERS, QAType, render_prompt  # noqa: E402
from psl.records import import_uniprot_tsv, write_proteins  # noqa: E402

SEED = 20240611
AA = "ACDEFGHIKLMNPQRSTVWY"

# (id, name, namespace, parents); roots have no parents
TERMS = [
    ("GO:0008150", "biological_process", "biological_process", []),
    ("GO:0008152", "metabolic process", "biological_process", ["GO:0008150"]),
    ("GO:0006629", "lipid metabolic process", "biological_process", ["GO:0008152"]),
    ("GO:0006631", "fatty acid metabolic process", "biological_process", ["GO:0006629"]),
    ("GO:0005975", "carbohydrate metabolic process", "biological_process", ["GO:0008152"]),
    ("GO:0006006", "glucose metabolic process", "biological_process", ["GO:0005975"]),
    ("GO:0006096", "glycolytic process", "biological_process", ["GO:0006006"]),
    ("GO:0006259", "DNA metabolic process", "biological_process", ["GO:0008152"]),
    ("GO:0006281", "DNA repair", "biological_process", ["GO:0006259", "GO:0006974"]),
    ("GO:0006260", "DNA replication", "biological_process", ["GO:0006259"]),
    ("GO:0019538", "protein metabolic process", "biological_process", ["GO:0008152"]),
    ("GO:0006508", "proteolysis", "biological_process", ["GO:0019538"]),
    ("GO:0006412", "translation", "biological_process", ["GO:0019538"]),
    ("GO:0050896", "response to stimulus", "biological_process", ["GO:0008150"]),
    ("GO:0006950", "response to stress", "biological_process", ["GO:0050896"]),
    ("GO:0006974", "DNA damage response", "biological_process", ["GO:0006950"]),
    ("GO:0006979", "response to oxidative stress", "biological_process", ["GO:0006950"]),
    ("GO:0051179", "localization", "biological_process", ["GO:0008150"]),
    ("GO:0006810", "transport", "biological_process", ["GO:0051179"]),
    ("GO:0006811", "monoatomic ion transport", "biological_process", ["GO:0006810"]),
    ("GO:0015031", "protein transport", "biological_process", ["GO:0006810"]),
    ("GO:0007049", "cell cycle", "biological_process", ["GO:0008150"]),
    ("GO:0003674", "molecular_function", "molecular_function", []),
    ("GO:0003824", "catalytic activity", "molecular_function", ["GO:0003674"]),
    ("GO:0016787", "hydrolase activity", "molecular_function", ["GO:0003824"]),
    ("GO:0008233", "peptidase activity", "molecular_function", ["GO:0016787"]),
    ("GO:0016740", "transferase activity", "molecular_function", ["GO:0003824"]),
    ("GO:0016301", "kinase activity", "molecular_function", ["GO:0016740"]),
    ("GO:0016491", "oxidoreductase activity", "molecular_function", ["GO:0003824"]),
    ("GO:0005488", "binding", "molecular_function", ["GO:0003674"]),
    ("GO:0003676", "nucleic acid binding", "molecular_function", ["GO:0005488"]),
    ("GO:0003677", "DNA binding", "molecular_function", ["GO:0003676"]),
    ("GO:0003723", "RNA binding", "molecular_function", ["GO:0003676"]),
    ("GO:0005515", "protein binding", "molecular_function", ["GO:0005488"]),
    ("GO:0000166", "nucleotide binding", "molecular_function", ["GO:0005488"]),
    ("GO:0005524", "ATP binding", "molecular_function", ["GO:0000166"]),
    ("GO:0005215", "transporter activity", "molecular_function", ["GO:0003674"]),
    ("GO:0005575", "cellular_component", "cellular_component", []),
    ("GO:0110165", "cellular anatomical entity", "cellular_component", ["GO:0005575"]),
    ("GO:0016020", "membrane", "cellular_component", ["GO:0110165"]),
    ("GO:0005886", "plasma membrane", "cellular_component", ["GO:0016020"]),
    ("GO:0005634", "nucleus", "cellular_component", ["GO:0110165"]),
    ("GO:0005737", "cytoplasm", "cellular_component", ["GO:0110165"]),
    ("GO:0005739", "mitochondrion", "cellular_component", ["GO:0005737"]),
    ("GO:0005840", "ribosome", "cellular_component", ["GO:0005737"]),
]
PART_OF = {"GO:0005840": "GO:0005737", "GO:0006096": "GO:0008152"}
OBSOLETE = ("GO:0000004", "biological_process obsolete", "biological_process")

# name, family, function, location, motif, GO terms, weight, minimum subfamily count
ARCHETYPES = [
    ("Serine/threonine-protein kinase", "Protein kinase superfamily",
     "Phosphorylates substrate proteins on serine and threonine residues to drive cell cycle progression.",
     "Cytoplasm", "Glycine-rich loop GxGxxG",
     ["GO:0016301", "GO:0005524", "GO:0005737", "GO:0007049"], 26, 4),
    ("DNA repair protein RadA", "RecA family",
     "Catalyzes ATP-dependent strand exchange during homologous recombination repair of double-strand breaks.",
     "Nucleus", "Walker A motif GxxxxGK[ST]",
     ["GO:0006281", "GO:0003677", "GO:0005524", "GO:0005634"], 22, 3),
    ("DNA polymerase III subunit", "DNA polymerase type-C family",
     "Synthesizes the leading strand during chromosomal DNA replication.",
     "Nucleus", "",
     ["GO:0006260", "GO:0003677", "GO:0005634"], 16, 3),
    ("Hexokinase", "Hexokinase family",
     "Phosphorylates glucose to glucose 6-phosphate in the first step of glycolysis.",
     "Cytoplasm", "",
     ["GO:0006096", "GO:0016301", "GO:0005524", "GO:0005737"], 20, 3),
    ("Beta-glucosidase", "Glycosyl hydrolase 1 family",
     "Hydrolyzes terminal beta-D-glucosyl residues from oligosaccharides.",
     "Secreted", "",
     ["GO:0005975", "GO:0016787"], 16, 3),
    ("Acyl-CoA dehydrogenase", "Acyl-CoA dehydrogenase family",
     "Catalyzes the first step of mitochondrial fatty acid beta-oxidation using FAD as cofactor.",
     "Mitochondrion matrix", "",
     ["GO:0006631", "GO:0016491", "GO:0005739"], 6, 2),
    ("Subtilisin-like protease", "Peptidase S8 family",
     "Serine protease that cleaves peptide bonds after hydrophobic residues.",
     "Secreted", "Catalytic triad Asp-His-Ser",
     ["GO:0006508", "GO:0008233"], 18, 3),
    ("50S ribosomal protein L2", "Universal ribosomal protein uL2 family",
     "Binds 23S rRNA and is required for peptidyl transferase activity of the ribosome.",
     "Cytoplasm", "",
     ["GO:0006412", "GO:0003723", "GO:0005840"], 28, 4),
    ("Voltage-gated potassium channel", "Potassium channel family",
     "Mediates selective potassium ion permeability across the plasma membrane.",
     "Cell membrane; multi-pass membrane protein", "Selectivity filter TVGYG",
     ["GO:0006811", "GO:0005215", "GO:0005886"], 18, 3),
    ("Peroxiredoxin", "Peroxiredoxin family",
     "Reduces hydrogen peroxide and alkyl hydroperoxides to protect cells against oxidative stress.",
     "Cytoplasm", "Peroxidatic cysteine motif FTFVCPTEI",
     ["GO:0006979", "GO:0016491", "GO:0005737"], 14, 3),
    ("Protein translocase subunit SecY", "SecY/SEC61-alpha family",
     "Forms the central channel of the protein translocation apparatus.",
     "Cell membrane; multi-pass membrane protein", "",
     ["GO:0015031", "GO:0005215", "GO:0016020"], 10, 2),
    ("Heat shock protein HSP 33", "HSP33 family",
     "Redox-regulated molecular chaperone that binds unfolded client proteins under heat stress.",
     "Cytoplasm", "",
     ["GO:0006950", "GO:0005515", "GO:0005737"], 2, 1),
]

KINGDOMS = [
    ("Eukaryota", "cellular organisms, Eukaryota, Opisthokonta, Metazoa", 0.40),
    ("Bacteria", "cellular organisms, Bacteria, Pseudomonadota", 0.35),
    ("Archaea", "cellular organisms, Archaea, Euryarchaeota", 0.15),
    ("Viruses", "Viruses, Duplodnaviria, Heunggongvirae", 0.10),
]


# optional annotations sprinkled over archetype members so functional IC varies
EXTRA_POOL = ["GO:0005515", "GO:0000166", "GO:0003723", "GO:0016020", "GO:0005634", "GO:0006950", "GO:0007049"]


def extra_terms(rng: random.Random) -> set[str]:
    n = rng.choices([0, 1, 2], weights=[0.4, 0.4, 0.2])[0]
    return set(rng.sample(EXTRA_POOL, n))


def random_seq(rng: random.Random, n: int) -> str:
    return "M" + "".join(rng.choice(AA) for _ in range(n - 1))


def mutate(rng: random.Random, seq: str, rate: float) -> str:
    out = [c if rng.random() >= rate or i == 0 else rng.choice(AA) for i, c in enumerate(seq)]
    if rng.random() < 0.3:  # occasional short indel
        i = rng.randrange(5, len(out) - 5)
        if rng.random() < 0.5:
            del out[i : i + rng.randint(1, 3)]
        else:
            out[i:i] = [rng.choice(AA) for _ in range(rng.randint(1, 3))]
    return "".join(out)


def write_obo(path: Path) -> None:
    lines = ["format-version: 1.2", "data-version: toy/2024-06-11", "ontology: go", ""]
    for tid, name, ns, parents in TERMS:
        lines += ["[Term]", f"id: {tid}", f"name: {name}", f"namespace: {ns}"]
        names = {t[0]: t[1] for t in TERMS}
        lines += [f"is_a: {p} ! {names[p]}" for p in parents]
        if tid in PART_OF:
            lines.append(f"relationship: part_of {PART_OF[tid]} ! {names[PART_OF[tid]]}")
        lines.append("")
    tid, name, ns = OBSOLETE
    lines += ["[Term]", f"id: {tid}", f"name: {name}", f"namespace: {ns}", "is_obsolete: true", ""]
    lines += ["[Typedef]", "id: part_of", "name: part of", ""]
    path.write_text("\n".join(lines), encoding="utf-8")


def make_proteins(rng: random.Random) -> list[dict]:
    rows = []
    n = 1
    for name, family, func, loc, motif, gos, weight, subfams in ARCHETYPES:
        subfams = max(subfams, weight // 2)
        founders = [random_seq(rng, rng.randint(70, 180)) for _ in range(subfams)]
        for j in range(weight):
            founder = founders[j % subfams]
            kingdom, lineage, _ = rng.choices(KINGDOMS, weights=[k[2] for k in KINGDOMS])[0]
            rows.append(
                {
                    "Entry": f"PSL{n:03d}",
                    "Protein names": f"{name} {j + 1}",
                    "Sequence": mutate(rng, founder, rng.uniform(0.02, 0.06)),
                    "Gene Ontology IDs": "; ".join(sorted(set(gos) | extra_terms(rng))),
                    "Taxonomic lineage": lineage,
                    "Function [CC]": f"FUNCTION: {func} {{ECO:0000250|UniProtKB:P00000}}",
                    "Subcellular location [CC]": f"SUBCELLULAR LOCATION: {loc}.",
                    "Protein families": family,
                    "Sequence similarities": f"SIMILARITY: Belongs to the {family}.",
                    "Motif": motif,
                }
            )
            n += 1
    # edge cases: root-only, unresolvable ids, no annotation at all
    extras = [
        ("Uncharacterized protein YqgF", "GO:0008150", "Eukaryota"),
        ("Putative obsolete-annotated protein", "GO:0000004; GO:9999999", "Bacteria"),
        ("Hypothetical protein", "", "Viruses"),
    ]
    for name, gos, kingdom in extras:
        lineage = next(k[1] for k in KINGDOMS if k[0] == kingdom)
        rows.append(
            {
                "Entry": f"PSL{n:03d}",
                "Protein names": name,
                "Sequence": random_seq(rng, rng.randint(80, 140)),
                "Gene Ontology IDs": gos,
                "Taxonomic lineage": lineage,
                "Function [CC]": "",
                "Subcellular location [CC]": "",
                "Protein families": "",
                "Sequence similarities": "",
                "Motif": "",
            }
        )
        n += 1
    return rows


def write_tsv(path: Path, rows: list[dict]) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), delimiter="\t", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


# Mock LLM replies ------------------------------------------------------------


def reply_attribute(p) -> str:
    a = p.annotation
    return (
        f"PROTEIN NAME: {a.name}\nFUNCTION: {a.function or 'N/A'}\n"
        f"SUBCELLULAR LOCATION: {a.location or 'N/A'}\nFAMILY: {a.family or 'N/A'}\n"
        f"KEY SEQUENCE MOTIF: {a.motif or 'N/A'}\n\n"
        f"Extended Information: {a.name} is a {len(p.sequence)}-residue protein from {p.superkingdom}. "
        f"{a.similarity or 'No family assignment is available.'}"
    )


def reply_descriptive(p, rng: random.Random) -> str:
    a = p.annotation
    opener = rng.choice(DESCRIPTIVE_OPENERS)
    return (
        f"{opener} it is a member of the {a.family or 'uncharacterized'} group. "
        f"{a.function or 'Its function is unknown.'} It localizes to the {(a.location or 'unknown compartment').lower()}"
        f"{'; it carries the ' + a.motif if a.motif else ''}."
    )


def reply_knowledge(p, rng: random.Random) -> str:
    a = p.annotation
    qa = [
        ("Where is this protein located in the cell?", a.location or "The location is not annotated."),
        ("What is the main function of this protein?", a.function or "Its function is not annotated."),
        ("Which protein family does it belong to?", a.family or "No family is annotated."),
        ("In which superkingdom is this protein found?", p.superkingdom),
    ]
    if a.motif:
        qa.append(("Does the protein contain a conserved sequence motif?", f"Yes, the {a.motif}."))
    qa = qa[: rng.randint(2, len(qa))]
    qs = "\n".join(f"{i}. {q}" for i, (q, _) in enumerate(qa, 1))
    ans = "\n".join(f"{i}. {x}" for i, (_, x) in enumerate(qa, 1))
    return f"<Questions>\n{qs}\n<\\Questions>\n<Answers>\n{ans}\n<\\Answers>"


def reply_truefalse(p, rng: random.Random) -> str:
    a = p.annotation
    truth = rng.random() < 0.5
    loc = a.location or "the cytoplasm"
    shown = loc if truth else ("the nucleus" if "Nucleus" not in loc else "the mitochondrion")
    return (
        f"Stem: The {a.name or 'protein'}, a {p.superkingdom.lower()} member of the "
        f"{a.family or 'uncharacterized'} group, resides in {shown.lower()} where it acts; "
        f"Answer: {'True' if truth else 'False'}; "
        f"Explanation: The annotation places it in {loc.lower()}."
    )


BAD = {
    QAType.ATTRIBUTE: "PROTEIN NAME: unknown\nFUNCTION: unknown",
    QAType.KNOWLEDGE: "<Questions>\n1. What does it do?\n2. Where is it?\n<\\Questions>\n<Answers>\n1. Unknown.\n<\\Answers>",
    QAType.DESCRIPTIVE: "This protein is an enzyme.",
    QAType.TRUEFALSE: "Stem: This protein is True to its family; Answer: Maybe; Explanation: unclear.",
}


def make_script(proteins, rng: random.Random) -> dict:
    script = {}
    for i, p in enumerate(sorted(proteins, key=lambda p: p.accession)):
        for t in QAType:
            good = {
                QAType.ATTRIBUTE: lambda: reply_attribute(p),
                QAType.KNOWLEDGE: lambda: reply_knowledge(p, rng),
                QAType.DESCRIPTIVE: lambda: reply_descriptive(p, rng),
                QAType.TRUEFALSE: lambda: reply_truefalse(p, rng),
            }[t]()
            key = prompt_key(render_prompt(p, t))
            roll = rng.random()
            if roll < 0.02:
                script[key] = [BAD[t]]  # never recovers: ends in the rejects file
            elif roll < 0.10:
                script[key] = [BAD[t], good]  # recovers on the first retry
            else:
                script[key] = good
    return {"echo": True, "script": dict(sorted(script.items()))}


def make_benchmarks(proteins, rng: random.Random) -> tuple[list[dict], list[dict]]:
    picks = rng.sample([p for p in proteins if p.annotation.function], 12)
    desc, qa = [], []
    for i, p in enumerate(picks):
        a = p.annotation
        seq = mutate(rng, p.sequence, 0.15)
        if i % 2 == 0:
            desc.append(
                {
                    "accession": f"BD{i:03d}",
                    "sequence": seq,
                    "protein_name": a.name.rsplit(" ", 1)[0],
                    "function": a.function,
                    "subloc": a.location,
                    "similarity": a.similarity,
                }
            )
        else:
            qa.append(
                {
                    "id": f"BQ{i:03d}",
                    "sequence": seq,
                    "question": "What is the main function of this protein?",
                    "answer": a.function,
                }
            )
    return desc, qa


def main() -> None:
    rng = random.Random(SEED)
    OUT.mkdir(parents=True, exist_ok=True)
    write_obo(OUT / "toy_go.obo")
    rows = make_proteins(rng)
    write_tsv(OUT / "toy_uniprot.tsv", rows)
    with open(OUT / "toy_uniprot.tsv", encoding="utf-8", newline="") as fh:
        proteins = import_uniprot_tsv(fh)
    write_proteins(OUT / "toy_proteins.jsonl", proteins, {"tool": "make_fixtures", "seed": SEED})

    script = make_script(proteins, rng)
    (OUT / "mock_script.json").write_text(json.dumps(script, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    desc, qa = make_benchmarks(proteins, rng)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(desc[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(desc)
    (OUT / "toy_protdescribe.csv").write_text(buf.getvalue(), encoding="utf-8")
    (OUT / "toy_protein2text.jsonl").write_text("".join(json.dumps(r) + "\n" for r in qa), encoding="utf-8")

    # ratings: 6 items x 3 raters x 2 conditions on the 0-5 rubric
    lines = ["item_id,rater_id,condition,score"]
    for item in range(6):
        base = rng.randint(2, 4)
        for rater in range(3):
            w_ = min(5, base + rng.choice([0, 1, 1]))
            wo = max(0, base - rng.choice([0, 1]))
            lines.append(f"I{item},R{rater},with,{w_}")
            lines.append(f"I{item},R{rater},without,{wo}")
    (OUT / "toy_ratings.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    # golden pruning result from the independent oracle
    ini = (OUT / "toy.ini").read_text(encoding="utf-8")
    params = dict(
        line.split("=", 1) for line in ini.split("[pruning]")[1].split("[")[0].splitlines() if "=" in line
    )
    params = {k.strip(): float(v) for k, v in params.items()}
    terms = oracles.read_obo((OUT / "toy_go.obo").read_text(encoding="utf-8"))
    prot = [(p.accession, set(p.go_terms)) for p in proteins]
    golden = oracles.prune_oracle(
        terms, prot, params["total_count"], params["lambda"], params["beta"], params["tau0"], params["alpha"]
    )
    (OUT / "golden_prune.json").write_text(json.dumps(golden, indent=1) + "\n", encoding="utf-8")
    print(f"{len(proteins)} proteins, {len(terms)} terms, golden retained: {golden}")


if __name__ == "__main__":
    main()
