"""Write the bundled scikit-learn digits (8 vs 9) and breast-cancer sets as CSV."""
import csv
from pathlib import Path

from sklearn.datasets import load_breast_cancer, load_digits

out = Path(__file__).resolve().parent.parent / "data"
out.mkdir(exist_ok=True)

digits = load_digits()
with open(out / "digits_8_9.csv", "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow([f"px{i}" for i in range(digits.data.shape[1])] + ["label"])
    for row, target in zip(digits.data, digits.target):
        if target in (8, 9):
            w.writerow([f"{v:g}" for v in row] + [int(target == 9)])

cancer = load_breast_cancer()
with open(out / "breast_cancer.csv", "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow([n.replace(" ", "_") for n in cancer.feature_names] + ["label"])
    for row, target in zip(cancer.data, cancer.target):
        w.writerow([repr(float(v)) for v in row] + [int(target)])
