"""Release gates, one test per line of `pytest -v`.

Every gate re-derives its expected value from scratch (finite
differences, brute-force ranking, analytic closed forms, a second
training run) instead of trusting the unit suites, and the tolerances
and time budgets live here so loosening one is a visible diff.

The learnability gates share one trained stack: a fixed-seed synthetic
corpus, the laptop-scale model trained on it, a logistic-regression
reference, and a context-blind ablation of the same model.
"""

import hashlib
import json
import math
import time
import urllib.error
import urllib.request
from datetime import timedelta
from types import SimpleNamespace

import numpy as np
import numpy.testing as npt
import pytest

from nesa import autograd as ag
from nesa import baselines as bl
from nesa import cli
from nesa import datagen as dg
from nesa import evaluate as ev
from nesa import ics
from nesa import layers as ly
from nesa import model as md
from nesa import service as sv
from nesa.autograd import Tensor
from nesa.dataset import Splits, split_weeks
from nesa.ics import SLOTS_PER_WEEK
from nesa.train import batch_scorer, train_nesa

import test_parser_corpus as parser_corpus
from gradcheck import assert_grads_close, max_rel_error, numeric_grad, rand_tensor

VOCAB = ["budget", "lunch", "meeting", "review", "standup", "sync", "team",
         "weekly", "with", "1", ":", "!"]
USERS = ["alice", "bob", "carol"]


def ctx_event(slot, duration_min=60, title="standup", user="alice", order=0):
    start = ics.slot_to_datetime(slot, 2018, 14)
    registered = ics.slot_to_datetime(0, 2018, 14) - timedelta(days=2,
                                                               minutes=-order)
    return ics.CalendarEvent(uid=f"ctx-{slot}-{order}", title=title,
                             start=start, duration_min=duration_min,
                             registered_at=registered, user_id=user)


def mk_instance(title="team sync", answer=37, user="alice", duration=60 / 10080,
                context=()):
    return ics.SchedulingInstance(
        context=tuple(context), target_title=title,
        target_duration_scaled=duration, target_user=user, answer=answer,
        iso_year=2018, iso_week=14)


# --------------------------------------------------------------------------
# gate 1: reverse-mode gradients against the finite-difference oracle


def test_gradients_match_numeric_oracle():
    """Every layer at 1e-4, the whole model end to end at 1e-3, < 2 min."""
    t0 = time.monotonic()
    rng = np.random.default_rng(19)

    # layer blocks in isolation, float64
    cell = ly.LstmCellParams.create(3, 4, rng, dtype=np.float64)
    x, h0, c0 = (rand_tensor(rng, s) for s in ((3,), (4,), (4,)))
    w = rng.standard_normal(4)

    def f_cell():
        h, c = ly.lstm_cell(x, h0, c0, cell)
        return ag.sum_all(ag.mul(ag.add(h, c), Tensor(w)))

    assert_grads_close(f_cell, [x, h0, c0, cell.W_i1, cell.W_f2, cell.b_o])

    bi = ly.BiLstmParams.create(3, hidden=3, num_layers=2, rng=rng,
                                dtype=np.float64)
    padded = rand_tensor(rng, (2, 3, 3))
    w_bi = rng.standard_normal((2, 6))

    def f_bi():
        out = ly.bilstm_encode_batch(padded, [3, 2], bi)
        return ag.sum_all(ag.mul(out, Tensor(w_bi)))

    assert_grads_close(f_bi, [padded, bi.fw[0].W_i1, bi.bw[1].W_f1])

    cnn = ly.CharCnnParams.create(char_dim=3, banks=[(1, 2), (3, 2)], rng=rng,
                                  dtype=np.float64)
    w_cnn = rng.standard_normal((2, 4))

    def f_cnn():
        out = ly.char_cnn_words(["sync", "a"], cnn)
        return ag.sum_all(ag.mul(out, Tensor(w_cnn)))

    assert_grads_close(f_cnn, [cnn.table, cnn.banks[0][1], cnn.banks[1][2]])

    hw = ly.HighwayParams.create(4, rng=rng, dtype=np.float64)
    hx = rand_tensor(rng, (3, 4))
    w_hw = rng.standard_normal((3, 4))

    def f_hw():
        return ag.sum_all(ag.mul(ly.highway(hx, hw), Tensor(w_hw)))

    assert_grads_close(f_hw, [hx, hw.W_q, hw.b_q, hw.W_h, hw.b_h])

    cx = rand_tensor(rng, (2, 5, 4))
    cf = rand_tensor(rng, (3, 2, 3, 3), scale=0.5)
    cb = rand_tensor(rng, (3,))
    w_cv = rng.standard_normal((3, 5, 4))

    def f_conv():
        out = ag.max_over_time(
            ag.reshape(ag.conv2d_same(cx, cf, cb), (3, 20, 1)))
        return ag.sum_all(ag.mul(ag.reshape(out, (3,)), Tensor(w_cv[:, 0, 0])))

    assert_grads_close(f_conv, [cx, cf, cb], h=1e-4)

    bx = rand_tensor(rng, (4, 3, 2, 2))
    gamma = rand_tensor(rng, (3,))
    beta = rand_tensor(rng, (3,))
    w_bn = rng.standard_normal((4, 3, 2, 2))

    def f_bn():
        state = ag.BatchNormState.create(3, dtype=np.float64)
        out = ag.batchnorm2d(bx, gamma, beta, state, mode="train")
        return ag.sum_all(ag.mul(out, Tensor(w_bn)))

    assert_grads_close(f_bn, [bx, gamma, beta])

    # whole model, every trainable tensor, float64 shadow weights
    params = md.NesaParams.create(md.TINY_CONFIG, VOCAB, USERS,
                                  rng=np.random.default_rng(5),
                                  dtype=np.float64)
    batch = [mk_instance(context=[ctx_event(10)]),
             mk_instance(title="lunch !", answer=60, user="bob",
                         duration=90 / 10080)]

    def f_model():
        return md.loss(batch, params, mode="eval")

    tensors = [t for _, t in params.trainable()]
    names = [n for n, _ in params.trainable()]
    ag.zero_grads(tensors)
    with ag.Tape() as tape:
        tape.backward(f_model())
    for name, tensor in zip(names, tensors):
        analytic = (tensor.grad if tensor.grad is not None
                    else np.zeros_like(tensor.data))
        err = max_rel_error(analytic, numeric_grad(f_model, tensor))
        assert err <= 1e-3, f"{name}: end-to-end gradient off by {err:.3e}"

    assert time.monotonic() - t0 < 120.0


# --------------------------------------------------------------------------
# gate 2: ranking metrics against brute force


def _brute_rank(probs: np.ndarray, answer: int) -> int:
    pa = probs[answer]
    ahead = np.count_nonzero(probs > pa)
    tied_before = np.count_nonzero((probs == pa)
                                   & (np.arange(probs.size) < answer))
    return 1 + ahead + tied_before


def test_ranking_metrics_match_brute_force():
    """rank/recall/MRR/IEUC and group scoring on 10^4 random vectors, < 1 min."""
    t0 = time.monotonic()
    rng = np.random.Generator(np.random.Philox(20240))

    ranks = []
    for _ in range(10_000):
        probs = rng.random(SLOTS_PER_WEEK)
        answer = int(rng.integers(SLOTS_PER_WEEK))
        if rng.random() < 0.01:  # force ties through the tie-break path
            probs[answer] = probs[(answer + 7) % SLOTS_PER_WEEK]
        want = _brute_rank(probs, answer)
        assert ev.rank_of(probs, answer) == want
        ranks.append(want)

    for n in (1, 5):
        want = sum(1 for r in ranks if r <= n) / len(ranks)
        assert abs(ev.recall_at_n(ranks, n) - want) <= 1e-9
    assert abs(ev.mrr(ranks) - math.fsum(1.0 / r for r in ranks) / len(ranks)) \
        <= 1e-9

    for _ in range(2_000):
        a = int(rng.integers(SLOTS_PER_WEEK))
        b = int(rng.integers(SLOTS_PER_WEEK))
        want = 1.0 / (math.hypot(a // 24 - b // 24, a % 24 - b % 24) + 1.0)
        assert abs(ev.ieuc(a, b) - want) <= 1e-9

    # evaluate() is the same four numbers computed through the batch loop
    table = {i: rng.random(SLOTS_PER_WEEK) for i in range(300)}
    insts = [mk_instance(title=f"t {i}", answer=int(rng.integers(168)))
             for i in range(300)]
    scorer = lambda inst: table[int(inst.target_title.split()[1])]
    report = ev.evaluate(scorer, insts)
    want_ranks = [_brute_rank(table[i], insts[i].answer) for i in range(300)]
    want_ieuc = math.fsum(
        1.0 / (math.hypot(int(np.argmax(table[i])) // 24 - insts[i].answer // 24,
                          int(np.argmax(table[i])) % 24 - insts[i].answer % 24)
               + 1.0)
        for i in range(300)) / 300
    assert abs(report.mrr - math.fsum(1.0 / r for r in want_ranks) / 300) <= 1e-9
    assert abs(report.recall_at_1
               - sum(r == 1 for r in want_ranks) / 300) <= 1e-9
    assert abs(report.recall_at_5
               - sum(r <= 5 for r in want_ranks) / 300) <= 1e-9
    assert abs(report.ieuc - want_ieuc) <= 1e-9

    # group suggestion = stable sort of the per-attendee sum
    vectors = {u: rng.random(SLOTS_PER_WEEK) for u in ("a", "b", "c")}
    request = ev.MultiAttendeeRequest(
        title="sync", duration_scaled=60 / 10080, attendees=("a", "b", "c"),
        contexts={}, iso_year=2024, iso_week=10)
    got = ev.multi_attendee_suggest(
        request, lambda inst: vectors[inst.target_user], k=SLOTS_PER_WEEK)
    total = np.zeros(SLOTS_PER_WEEK)
    for u in ("a", "b", "c"):
        total = total + vectors[u]
    want_order = sorted(range(SLOTS_PER_WEEK), key=lambda s: (-total[s], s))
    assert [slot for slot, _ in got] == want_order
    for slot, score in got:
        assert abs(score - total[slot]) <= 1e-9

    assert time.monotonic() - t0 < 60.0


# --------------------------------------------------------------------------
# gate 3: the untrained floor is exactly the uniform distribution


def test_uniform_model_floor():
    """Zeroed head gives loss ln 168; a uniform scorer lands at H(168)/168."""
    params = md.NesaParams.create(md.TINY_CONFIG, VOCAB, USERS,
                                  rng=np.random.default_rng(5))
    params.out_W.data[:] = 0.0
    params.out_b.data[:] = 0.0
    batch = [mk_instance(answer=a) for a in (0, 37, 167)]
    assert md.loss(batch, params, mode="eval").item() == \
        pytest.approx(math.log(SLOTS_PER_WEEK), abs=1e-6)

    rng = np.random.Generator(np.random.Philox(7))
    answers = rng.integers(SLOTS_PER_WEEK, size=10_000)
    uniform = np.full(SLOTS_PER_WEEK, 1.0 / SLOTS_PER_WEEK)
    report = ev.evaluate(lambda inst: uniform,
                         [mk_instance(answer=int(a)) for a in answers])
    harmonic = math.fsum(1.0 / k for k in range(1, SLOTS_PER_WEEK + 1))
    assert abs(report.mrr - harmonic / SLOTS_PER_WEEK) <= 0.003


# --------------------------------------------------------------------------
# gate 4: parameter budget of the full-size configuration


def test_full_size_parameter_budget():
    """Default dims with 300-wide frozen embeddings land in [6.8M, 10.2M]."""
    config = md.NesaConfig(word_dim=300)
    vocab = [f"w{i}" for i in range(1000)]
    users = [f"u{i}" for i in range(100)]
    rng = np.random.Generator(np.random.Philox(0))
    frozen = rng.standard_normal((len(vocab), 300)).astype(np.float32)
    params = md.NesaParams.create(config, vocab, users, rng=rng,
                                  word_matrix=frozen)
    count = md.param_count(params)
    assert 6_800_000 <= count <= 10_200_000, f"{count:,} outside budget"


# --------------------------------------------------------------------------
# shared trained stack for the learnability gates


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    work = tmp_path_factory.mktemp("acceptance")
    ckpt = work / "desk.nesa"

    t0 = time.monotonic()
    config = dg.SyntheticConfig(seed=1)
    events, gold = dg.gen_dataset(config)
    splits = Splits(*split_weeks(ics.instances_from_events(events)))

    full = train_nesa(splits.train, splits.valid, md.DESK_CONFIG, seed=0,
                      epochs=10, batch_size=32, checkpoint_path=ckpt)
    full_report = ev.evaluate(
        lambda inst: md.forward(inst, full.params, mode="eval").data,
        splits.test, scorer_batch=batch_scorer(full.params))

    source = bl.train_embedding_source(splits.train, seed=0)
    stats = bl.UserStatsTable.fit(splits.train)
    logreg = bl.BaselineBundle(
        model=bl.train_logreg(bl.featurize_all(splits.train, source, stats),
                              seed=0),
        embeddings=source, user_stats=stats)
    logreg_report = ev.evaluate(logreg.score, splits.test,
                                scorer_batch=logreg.score_batch)
    elapsed = time.monotonic() - t0

    blind = train_nesa(splits.train, splits.valid,
                       md.DESK_CONFIG.with_ablation(("context",)), seed=0,
                       epochs=10, batch_size=32)
    blind_report = ev.evaluate(
        lambda inst: md.forward(inst, blind.params, mode="eval").data,
        splits.test, scorer_batch=batch_scorer(blind.params))

    return SimpleNamespace(
        config=config, events=events, gold=gold, splits=splits,
        checkpoint=ckpt, full=full, full_report=full_report,
        logreg_report=logreg_report, blind_report=blind_report,
        elapsed=elapsed)


UNIFORM_MRR = 0.0340  # H(168)/168, the guessing floor


def test_trained_model_beats_floor_and_logreg(trained):
    """5x the guessing floor, above logistic regression, within 30 min."""
    got = trained.full_report.mrr
    assert got >= 5 * UNIFORM_MRR, f"test MRR {got:.4f} under the floor"
    assert got > trained.logreg_report.mrr, (
        f"test MRR {got:.4f} does not beat logreg "
        f"{trained.logreg_report.mrr:.4f}")
    assert trained.elapsed <= 1800.0


def test_context_ablation_costs_accuracy(trained):
    """Training without the context layer drops MRR by at least 10%."""
    full = trained.full_report.mrr
    blind = trained.blind_report.mrr
    drop = (full - blind) / full
    assert drop >= 0.10, (
        f"context ablation only cost {100 * drop:.1f}% "
        f"({full:.4f} -> {blind:.4f})")


def test_trained_model_respects_exact_posterior_ceiling(trained):
    """No model outscores the generator's own conditional distribution."""
    rng = np.random.Generator(np.random.Philox(trained.config.seed))
    personas = dg.make_personas(trained.config, rng)
    table = dg.bayes_score_table(trained.events, trained.gold, personas)
    assert len(table) >= 5_000
    ranks = [ev.rank_of(probs, inst.answer) for inst, probs in table]
    ceiling = ev.mrr(ranks)
    assert trained.full_report.mrr <= ceiling + 0.02, (
        f"model {trained.full_report.mrr:.4f} above the exact posterior "
        f"{ceiling:.4f}")


# --------------------------------------------------------------------------
# gate 7: the service's group scores are per-attendee sums


def _http(method, url, body=None):
    data = None if body is None else json.dumps(body).encode("utf-8")
    req = urllib.request.Request(url, data=data, method=method)
    if data is not None:
        req.add_header("Content-Type", "application/json")
    with urllib.request.urlopen(req, timeout=30) as resp:
        return json.loads(resp.read().decode("utf-8"))


def test_service_group_scores_are_attendee_sums(trained):
    """Pair heatmap equals the sum of solo heatmaps; clones keep the order."""
    before = hashlib.sha256(trained.checkpoint.read_bytes()).hexdigest()
    scorer, _, kind = cli.load_scorer(trained.checkpoint)
    assert kind == "nesa"

    store = sv.CalendarStore()
    store.preload(trained.events)
    users = sorted({e.user_id for e in trained.events})[:2]
    week = trained.events[0].start.isocalendar()
    service = sv.CalendarService(scorer=scorer, checkpoint_hash=before,
                                 store=store)
    httpd, thread = sv.serve_in_thread(service)
    base = f"http://127.0.0.1:{httpd.server_address[1]}"
    try:
        def heat(payload):
            body = {"title": "quarterly budget review", "duration_min": 60,
                    "k": SLOTS_PER_WEEK, "iso_year": week[0],
                    "iso_week": week[1], **payload}
            got = _http("POST", f"{base}/api/suggest", body)
            return got["slots"], np.asarray(got["heatmap"]).reshape(-1)

        solo_a = heat({"user": users[0]})
        solo_b = heat({"user": users[1]})
        pair = heat({"user": users[0], "attendees": users})
        npt.assert_allclose(pair[1], solo_a[1] + solo_b[1], atol=1e-6)

        clones = heat({"user": users[0], "attendees": [users[0]] * 3})
        assert [s["slot"] for s in clones[0]] == \
            [s["slot"] for s in solo_a[0]]
        npt.assert_allclose(clones[1], 3.0 * solo_a[1], atol=1e-9)
    finally:
        httpd.shutdown()
        thread.join(timeout=10)

    after = hashlib.sha256(trained.checkpoint.read_bytes()).hexdigest()
    assert after == before, "serving must not touch the checkpoint"


# --------------------------------------------------------------------------
# gate 8: the parser corpus and a lossless write/read cycle


def _event_key(e):
    return (e.uid, e.title, e.start, e.duration_min, e.registered_at,
            e.user_id, e.attendee_ids, e.all_day)


def test_parser_corpus_and_render_round_trip():
    """All 25 fixture files parse exactly; 10^3 noisy events survive
    render -> parse untouched."""
    names = sorted(parser_corpus.EXPECTED)
    assert len(names) == 25
    for name in names:
        parser_corpus.check_fixture(name)

    config = dg.SyntheticConfig(seed=7, num_users=10, weeks_per_user=15,
                                misspelling_rate=0.2, non_english_rate=0.2,
                                multi_attendee_rate=0.1)
    events, _ = dg.gen_dataset(config)
    assert len(events) >= 1_000
    parsed = []
    for user, raw in dg.emit_ics(events).items():
        for e in ics.parse_ics(raw):
            assert e.user_id == user
            parsed.append(e)
    assert sorted(map(_event_key, parsed)) == sorted(map(_event_key, events))


# --------------------------------------------------------------------------
# gate 9: training is bit-reproducible


def test_training_is_bit_reproducible(tmp_path):
    """Same seed twice: same validation trace, byte-identical checkpoints."""
    config = dg.SyntheticConfig(seed=5, num_users=3, weeks_per_user=8)
    events, _ = dg.gen_dataset(config)
    splits = Splits(*split_weeks(ics.instances_from_events(events)))

    results = []
    for name in ("a.nesa", "b.nesa"):
        path = tmp_path / name
        res = train_nesa(splits.train, splits.valid, md.DESK_CONFIG, seed=0,
                         epochs=2, batch_size=32, checkpoint_path=path)
        results.append((res, path))

    (run_a, path_a), (run_b, path_b) = results
    assert run_a.history == run_b.history
    assert [h["val_mrr"] for h in run_a.history] == \
        [h["val_mrr"] for h in run_b.history]
    assert path_a.read_bytes() == path_b.read_bytes()
    assert (tmp_path / "a.nesa.json").read_text(encoding="utf-8") == \
        (tmp_path / "b.nesa.json").read_text(encoding="utf-8")
