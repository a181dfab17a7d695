"""Write the hand-compiled SC and NJ county edge lists (first-order shared border)."""

import csv
import sys
from pathlib import Path

SC = {
    "Abbeville": ["Anderson", "Greenwood", "McCormick", "Laurens"],
    "Aiken": ["Barnwell", "Edgefield", "Lexington", "Orangeburg", "Saluda"],
    "Allendale": ["Barnwell", "Hampton"],
    "Anderson": ["Greenville", "Pickens", "Oconee", "Laurens"],
    "Bamberg": ["Barnwell", "Orangeburg", "Colleton", "Hampton"],
    "Barnwell": ["Orangeburg"],
    "Beaufort": ["Jasper", "Hampton", "Colleton"],
    "Berkeley": ["Charleston", "Dorchester", "Orangeburg", "Clarendon", "Williamsburg", "Georgetown"],
    "Calhoun": ["Lexington", "Orangeburg", "Richland"],
    "Charleston": ["Dorchester", "Colleton", "Georgetown"],
    "Cherokee": ["Spartanburg", "Union", "York"],
    "Chester": ["York", "Lancaster", "Fairfield", "Union"],
    "Chesterfield": ["Lancaster", "Kershaw", "Darlington", "Marlboro"],
    "Clarendon": ["Sumter", "Williamsburg", "Orangeburg", "Florence"],
    "Colleton": ["Dorchester", "Hampton", "Orangeburg"],
    "Darlington": ["Marlboro", "Florence", "Lee"],
    "Dillon": ["Marlboro", "Marion", "Horry", "Florence"],
    "Dorchester": ["Orangeburg"],
    "Edgefield": ["Saluda", "Greenwood", "McCormick"],
    "Fairfield": ["Kershaw", "Richland", "Newberry", "Union"],
    "Florence": ["Lee", "Sumter", "Williamsburg", "Marion"],
    "Georgetown": ["Horry", "Marion", "Williamsburg"],
    "Greenville": ["Pickens", "Laurens", "Spartanburg"],
    "Greenwood": ["Laurens", "Newberry", "Saluda", "McCormick"],
    "Hampton": ["Jasper"],
    "Horry": ["Marion"],
    "Kershaw": ["Lancaster", "Lee", "Sumter", "Richland"],
    "Laurens": ["Spartanburg", "Union", "Newberry"],
    "Lee": ["Sumter"],
    "Lexington": ["Richland", "Orangeburg", "Saluda", "Newberry"],
    "Marion": ["Williamsburg"],
    "Newberry": ["Union", "Saluda", "Richland"],
    "Oconee": ["Pickens"],
    "Richland": ["Sumter"],
    "Spartanburg": ["Union"],
    "Union": ["York"],
}
SC_FIPS = {
    "Abbeville": "45001", "Aiken": "45003", "Allendale": "45005", "Anderson": "45007",
    "Bamberg": "45009", "Barnwell": "45011", "Beaufort": "45013", "Berkeley": "45015",
    "Calhoun": "45017", "Charleston": "45019", "Cherokee": "45021", "Chester": "45023",
    "Chesterfield": "45025", "Clarendon": "45027", "Colleton": "45029", "Darlington": "45031",
    "Dillon": "45033", "Dorchester": "45035", "Edgefield": "45037", "Fairfield": "45039",
    "Florence": "45041", "Georgetown": "45043", "Greenville": "45045", "Greenwood": "45047",
    "Hampton": "45049", "Horry": "45051", "Jasper": "45053", "Kershaw": "45055",
    "Lancaster": "45057", "Laurens": "45059", "Lee": "45061", "Lexington": "45063",
    "McCormick": "45065", "Marion": "45067", "Marlboro": "45069", "Newberry": "45071",
    "Oconee": "45073", "Orangeburg": "45075", "Pickens": "45077", "Richland": "45079",
    "Saluda": "45081", "Spartanburg": "45083", "Sumter": "45085", "Union": "45087",
    "Williamsburg": "45089", "York": "45091",
}
NJ = {
    "Atlantic": ["Cape May", "Cumberland", "Gloucester", "Camden", "Burlington", "Ocean"],
    "Bergen": ["Passaic", "Essex", "Hudson"],
    "Burlington": ["Camden", "Ocean", "Monmouth", "Mercer"],
    "Camden": ["Gloucester"],
    "Cape May": ["Cumberland"],
    "Cumberland": ["Gloucester", "Salem"],
    "Essex": ["Passaic", "Morris", "Union", "Hudson"],
    "Gloucester": ["Salem"],
    "Hunterdon": ["Warren", "Morris", "Somerset", "Mercer"],
    "Mercer": ["Somerset", "Middlesex", "Monmouth"],
    "Middlesex": ["Somerset", "Union", "Monmouth"],
    "Monmouth": ["Ocean"],
    "Morris": ["Sussex", "Passaic", "Union", "Somerset", "Warren"],
    "Passaic": ["Sussex"],
    "Somerset": ["Union"],
    "Sussex": ["Warren"],
}
NJ_FIPS = {
    "Atlantic": "34001", "Bergen": "34003", "Burlington": "34005", "Camden": "34007",
    "Cape May": "34009", "Cumberland": "34011", "Essex": "34013", "Gloucester": "34015",
    "Hudson": "34017", "Hunterdon": "34019", "Mercer": "34021", "Middlesex": "34023",
    "Monmouth": "34025", "Morris": "34027", "Ocean": "34029", "Passaic": "34031",
    "Salem": "34033", "Somerset": "34035", "Sussex": "34037", "Union": "34039",
    "Warren": "34041",
}


def write(path, table, fips):
    edges = sorted({tuple(sorted((fips[a], fips[b]))) for a, nb in table.items() for b in nb})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["fips_a", "fips_b"])
        w.writerows(edges)
    return len(edges)


if __name__ == "__main__":
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "src/stsir/fixtures")
    print("sc edges", write(out / "sc_adjacency.csv", SC, SC_FIPS))
    print("nj edges", write(out / "nj_adjacency.csv", NJ, NJ_FIPS))
