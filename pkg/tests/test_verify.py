import numpy as np
import pytest

from kpk import kpcore, quant, train, verify


def test_all_suites_pass_small():
    results = verify.run_all(trials=40, seed=3)
    assert [r.name for r in results] == list(verify.SUITES)
    for r in results:
        assert r.ok and r.counterexample is None, r.name
        assert r.total >= 1 and r.seconds >= 0


def test_bptt_covers_every_case():
    r = verify.bptt_grad(len(verify.BPTT_CASES), 0)
    assert r.ok and r.total == 25


def test_only_filter():
    assert [r.name for r in verify.run_all(10, only={"kp-oracle"})] == ["kp-oracle"]


def test_trial_scaling():
    counts = {k: c(1000) for k, (_, c) in verify.SUITES.items()}
    assert counts == {"kp-oracle": 1000, "hkp-oracle": 500, "kp-grad": 50, "bptt-grad": 25,
                      "rank-product": 500, "quant-codes": 100}


def test_detects_wrong_matvec(monkeypatch):
    monkeypatch.setattr(kpcore, "kp_matvec", lambda pair, x: kpcore.kp_matvec_naive(pair, x) * 1.001)
    r = verify.kp_oracle(5, 0)
    assert r.passed == 0 and r.counterexample["trial"] == 0
    assert r.counterexample["rel_err"] == pytest.approx(0.001 / 1.001, rel=1e-6)


def test_detects_wrong_gradient(monkeypatch):
    real = kpcore.kp_matvec_grad

    def off(pair, x, g):
        db, dc, dx = real(pair, x, g)
        return db, 2 * dc, dx

    monkeypatch.setattr(kpcore, "kp_matvec_grad", off)
    r = verify.kp_grad(4, 0)
    assert not r.ok and r.counterexample["tensor"] == "c"


def test_detects_wrong_bptt(monkeypatch):
    real = train.bptt_grads

    def off(net, xs, labels):
        loss, grads = real(net, xs, labels)
        return loss, {k: (v + 1e-2 if k == "softmax.b" else v) for k, v in grads.items()}

    monkeypatch.setattr(train, "bptt_grads", off)
    r = verify.bptt_grad(2, 0)
    assert r.passed == 0 and r.counterexample["param"] == "softmax.b"


def test_detects_wrong_quantizer(monkeypatch):
    real = quant.e4m3_encode
    monkeypatch.setattr(quant, "e4m3_encode", lambda v: real(np.asarray(v) * 1.2))
    r = verify.quant_codes(1, 0)
    assert not r.ok and r.counterexample["scheme"] == "float8_e4m3"


def test_report_json_round_trip():
    import json

    data = json.loads(verify.report_json(verify.run_all(4, only={"rank-product"})))
    assert data[0]["name"] == "rank-product" and data[0]["ok"] is True
