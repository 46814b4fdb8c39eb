"""Train the laptop-scale model on a small synthetic corpus end to end.

Generates calendars for a handful of users with planted preferences,
splits by week, trains for a few epochs, and compares against logistic
regression and the uniform floor.  Takes roughly a minute on one CPU.

Run from the repository root:

    python3 demos/train_synthetic.py
"""

import numpy as np

from nesa import baselines as bl
from nesa import datagen as dg
from nesa import evaluate as ev
from nesa import ics
from nesa import model as md
from nesa.dataset import Splits, split_weeks
from nesa.train import batch_scorer, train_nesa


def main() -> None:
    config = dg.SyntheticConfig(seed=4, num_users=8, weeks_per_user=20)
    events, _ = dg.gen_dataset(config)
    splits = Splits(*split_weeks(ics.instances_from_events(events)))
    print(f"{len(events)} events -> {len(splits.train)} train / "
          f"{len(splits.valid)} valid / {len(splits.test)} test instances")

    result = train_nesa(splits.train, splits.valid, md.DESK_CONFIG, seed=0,
                        epochs=6, batch_size=32, log=print)
    print(f"best epoch {result.best_epoch} "
          f"(val MRR {result.best_val_mrr:.4f})")

    nesa_report = ev.evaluate(
        lambda inst: md.forward(inst, result.params, mode="eval").data,
        splits.test, scorer_batch=batch_scorer(result.params))

    source = bl.train_embedding_source(splits.train, seed=0)
    stats = bl.UserStatsTable.fit(splits.train)
    logreg = bl.train_logreg(bl.featurize_all(splits.train, source, stats),
                             seed=0)
    logreg_report = ev.evaluate(
        lambda inst: logreg.predict(bl.featurize(inst, source, stats)),
        splits.test)

    uniform = np.full(ics.SLOTS_PER_WEEK, 1.0 / ics.SLOTS_PER_WEEK)
    uniform_report = ev.evaluate(lambda inst: uniform, splits.test)

    print()
    print(ev.format_report_table([
        ("neural model", nesa_report),
        ("logistic regression", logreg_report),
        ("uniform", uniform_report),
    ]))


if __name__ == "__main__":
    main()
