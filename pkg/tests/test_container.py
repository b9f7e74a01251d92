import numpy as np
import pytest

from kooplan.container import (
    load_container,
    load_dictionary,
    load_generator,
    load_operator,
    load_residual,
    load_snapshots,
    save_container,
    save_dictionary,
    save_generator,
    save_operator,
    save_residual,
    save_snapshots,
)
from kooplan.dual_data import GeneratorOperator, ResidualOperator
from kooplan.errors import InvalidInputError
from kooplan.koopman import LiftedOperator, SnapshotDataset
from kooplan.observables import (
    compose_composite,
    identity_dictionary,
    init_encoder,
    lift,
    rbf_dictionary,
    trained_dictionary,
)


def test_raw_container_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    fields = {"A": rng.normal(size=(3, 4)), "idx": np.arange(5)}
    meta = {"dt": 0.05, "note": "x"}
    p = tmp_path / "c.kpc"
    save_container(p, "raw", fields, meta)
    kind, loaded, m2 = load_container(p)
    assert kind == "raw"
    assert m2 == meta
    assert np.array_equal(loaded["A"], fields["A"])
    assert np.array_equal(loaded["idx"], fields["idx"])
    assert loaded["A"].dtype == np.float64


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "bad.kpc"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(InvalidInputError):
        load_container(p)


def test_snapshot_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    ds = SnapshotDataset(rng.normal(size=(3, 10)), rng.normal(size=(3, 10)),
                         rng.normal(size=(2, 10)), 0.05)
    p = tmp_path / "ds.kpc"
    save_snapshots(p, ds)
    ds2 = load_snapshots(p)
    assert np.array_equal(ds.X, ds2.X)
    assert np.array_equal(ds.Xp, ds2.Xp)
    assert np.array_equal(ds.U, ds2.U)
    assert ds.dt == ds2.dt


def test_operator_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    op = LiftedOperator(rng.normal(size=(4, 4)), rng.normal(size=(4, 2)),
                        rng.normal(size=(3, 4)), "rbf(3,k=1,w=1)", 0.1,
                        rank_deficient=True, version=7)
    p = tmp_path / "op.kpc"
    save_operator(p, op)
    op2 = load_operator(p)
    assert np.array_equal(op.Gamma, op2.Gamma)
    assert np.array_equal(op.Delta, op2.Delta)
    assert np.array_equal(op.Pi, op2.Pi)
    assert (op.dict_id, op.dt, op.rank_deficient, op.version) == \
        (op2.dict_id, op2.dt, op2.rank_deficient, op2.version)


@pytest.mark.parametrize("make", [
    lambda: identity_dictionary(3, constant=True),
    lambda: rbf_dictionary(np.random.default_rng(3).normal(size=(5, 2)), 0.7),
    lambda: trained_dictionary(init_encoder([3, 6, 2], seed=4)),
    lambda: compose_composite(
        rbf_dictionary(np.random.default_rng(5).normal(size=(4, 3)), 1.1),
        identity_dictionary(2, constant=True),
    ),
])
def test_dictionary_round_trip(tmp_path, make):
    d = make()
    p = tmp_path / "d.kpc"
    save_dictionary(p, d)
    d2 = load_dictionary(p)
    assert d2.describe() == d.describe()
    rng = np.random.default_rng(9)
    chi = rng.normal(size=d.in_dim)
    assert np.array_equal(lift(d, chi), lift(d2, chi))


def test_generator_residual_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    gen = GeneratorOperator(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), 0.1, True)
    res = ResidualOperator(rng.normal(size=(3, 3)), 0.1)
    pg = tmp_path / "g.kpc"
    pr = tmp_path / "r.kpc"
    save_generator(pg, gen)
    save_residual(pr, res)
    g2 = load_generator(pg)
    r2 = load_residual(pr)
    assert np.array_equal(gen.L, g2.L)
    assert np.array_equal(gen.half_step, g2.half_step)
    assert gen.rank_deficient == g2.rank_deficient
    assert np.array_equal(res.H, r2.H)


def test_wrong_kind_rejected(tmp_path):
    p = tmp_path / "x.kpc"
    save_container(p, "operator", {"Gamma": np.eye(2)}, {})
    with pytest.raises(InvalidInputError):
        load_snapshots(p)
