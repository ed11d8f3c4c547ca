from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import cohort, make_manifest
from inkdx.core import DiagnosticClass
from inkdx.splits import (
    FoldPlan,
    TooFewSubjects,
    UnknownSubject,
    holdout_split,
    make_fold_plan,
    materialize_split,
)

PD, CTL = DiagnosticClass.PD, DiagnosticClass.CTL


def fold_tallies(plan):
    return [Counter(plan.subject_class[s] for s in plan.test_subjects(f)) for f in range(plan.k)]


def test_five_per_class_one_each_fold():
    plan = make_fold_plan(cohort(5, 5), (PD, CTL))
    for t in fold_tallies(plan):
        assert t == {PD: 1, CTL: 1}


def test_pahaw_shaped_folds():
    m = cohort(37, 38)
    plan = make_fold_plan(m, (PD, CTL), seed=3)
    tallies = fold_tallies(plan)
    # brute force over every fold
    assert all(abs(sum(t.values()) - 15) <= 1 for t in tallies)
    assert all(t[PD] in (7, 8) for t in tallies)
    assert sum(t[PD] for t in tallies) == 37 and sum(t[CTL] for t in tallies) == 38


def test_too_few_subjects():
    with pytest.raises(TooFewSubjects):
        make_fold_plan(cohort(4, 10), (PD, CTL))


def test_single_sample_subjects_one_test_sample():
    m = make_manifest([(f"S{i}", "PD", 1) for i in range(5)] +
                      [(f"C{i}", "CTL", 1) for i in range(5)])
    plan = make_fold_plan(m, (PD, CTL))
    for f in range(5):
        _, _, test = materialize_split(plan, f, m.filter(classes=[PD]))
        assert len(test) == 1


def test_subject_atomicity():
    m = make_manifest([("BIG", "PD", 7)] + [(f"P{i}", "PD", 1) for i in range(4)] +
                      [(f"C{i}", "CTL", 2) for i in range(5)])
    plan = make_fold_plan(m, (PD, CTL), seed=11)
    f = plan.fold_of_subject["BIG"]
    train, val, test = materialize_split(plan, f, m)
    assert sum(e.subject_id == "BIG" for e in test) == 7
    assert not any(e.subject_id == "BIG" for e in train + val)


def test_unknown_subject():
    plan = make_fold_plan(cohort(5, 5), (PD, CTL))
    with pytest.raises(UnknownSubject):
        materialize_split(plan, 0, make_manifest([("ghost", "PD", 1)]))


def test_other_classes_ignored():
    m = make_manifest([(f"P{i}", "PD", 1) for i in range(5)] +
                      [(f"C{i}", "CTL", 1) for i in range(5)] + [("A0", "AD", 2)])
    plan = make_fold_plan(m, (PD, CTL))
    assert "A0" not in plan.fold_of_subject
    parts = materialize_split(plan, 0, m)
    assert sum(map(len, parts)) == 10


def test_validation_split_stratified():
    plan = make_fold_plan(cohort(20, 30), (PD, CTL), seed=2)
    for f in range(5):
        val = plan.val_subjects[f]
        assert not val & plan.test_subjects(f)
        c = Counter(plan.subject_class[s] for s in val)
        # 16 PD and 24 CTL remain: 20% rounds to 3 and 5
        assert c == {PD: 3, CTL: 5}


def test_json_round_trip(tmp_path):
    plan = make_fold_plan(cohort(9, 12), (PD, CTL), seed=4)
    plan.save(tmp_path / "plan.json")
    assert FoldPlan.load(tmp_path / "plan.json") == plan


def test_holdout_namespaces_datasets():
    a = list(cohort(10, 10, name="A").entries)
    b = list(cohort(10, 10, name="B").entries)  # same subject ids as A
    train, val = holdout_split({"A": a, "B": b}, 0.1, seed=0)
    n_val = sum(len(v) for v in val.values())
    assert n_val == 4  # 20 namespaced subjects per class, 10% each
    for ds in ("A", "B"):
        assert not {e.subject_id for e in train[ds]} & {e.subject_id for e in val[ds]}


@st.composite
def manifests(draw):
    n_pd = draw(st.integers(5, 40))
    n_ctl = draw(st.integers(5, 40))
    subs = [(f"P{i}", "PD", draw(st.integers(1, 4))) for i in range(n_pd)]
    subs += [(f"C{i}", "CTL", draw(st.integers(1, 4))) for i in range(n_ctl)]
    return make_manifest(subs)


@settings(max_examples=40, deadline=None)
@given(manifests(), st.integers(0, 2**31 - 1))
def test_partitions_disjoint_and_covering(m, seed):
    plan = make_fold_plan(m, (PD, CTL), seed=seed)
    all_ids = sorted(e.sample_id for e in m.entries)
    seen_test = Counter()
    for f in range(5):
        train, val, test = materialize_split(plan, f, m)
        ids = [e.sample_id for e in train + val + test]
        assert sorted(ids) == all_ids
        subj = [{e.subject_id for e in part} for part in (train, val, test)]
        assert not subj[0] & subj[1] and not subj[0] & subj[2] and not subj[1] & subj[2]
        assert val and train
        seen_test.update(subj[2])
    assert all(v == 1 for v in seen_test.values()) and len(seen_test) == len(m.subjects())
    assert make_fold_plan(m, (PD, CTL), seed=seed) == plan
