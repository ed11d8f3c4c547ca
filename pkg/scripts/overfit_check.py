"""Full fine-tune on 16 rendered synthetic spirals and report per-epoch training accuracy."""

import argparse
import time

import numpy as np
import torch

from inkdx.core import DiagnosticClass
from inkdx.model import ClassifierConfig, build_classifier, to_model_input
from inkdx.raster import render
from inkdx.synth import generate_cohort
from inkdx.train import TrainConfig, train_fold


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--weights", default="none")
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--until-perfect", action="store_true",
                    help="stop once an epoch reaches 100%% training accuracy")
    args = ap.parse_args()

    m, recs = generate_cohort(10, seed=5)
    index = {DiagnosticClass.PD: 1, DiagnosticClass.CTL: 0}
    entries = sorted(m.entries, key=lambda e: e.subject_id)
    tr = [e for e in entries if e.subject_id[-3:] < "008"]
    va = [e for e in entries if e.subject_id[-3:] >= "008"]

    def arrays(es):
        return (np.stack([render(recs[e.sample_id]).pixels for e in es]),
                np.array([index[e.label] for e in es]))

    model = build_classifier(ClassifierConfig(pretrained_weights=args.weights))
    cfg = TrainConfig(max_epochs=args.epochs, patience=min(10, args.epochs - 1))

    def show(epoch, rec):
        print(f"epoch {epoch:2d}  train loss {rec.train_loss[-1]:.4f}  "
              f"train acc {rec.train_accuracy[-1]:.3f}  val loss {rec.val_loss[-1]:.4f}",
              flush=True)
        return args.until_perfect and rec.train_accuracy[-1] == 1.0

    start = time.perf_counter()
    train_pixels, train_labels = arrays(tr)
    _, log = train_fold(model, (train_pixels, train_labels), arrays(va), cfg, on_epoch=show)
    with torch.no_grad():
        model.eval()
        acc = (model(to_model_input(train_pixels)).argmax(1).numpy() == train_labels).mean()
    print(f"stop: {log.stop_reason}, best epoch {log.best_epoch}, eval-mode training "
          f"accuracy {acc:.3f}, {time.perf_counter() - start:.0f}s")


if __name__ == "__main__":
    main()
