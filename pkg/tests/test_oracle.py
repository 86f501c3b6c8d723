import numpy as np
import pytest

from oclb.chain_instance import SignFlipInstance
from oclb.errors import BudgetExceededError, DegenerateInstanceError, InvalidQueryError
from oclb.oracle import (
    CallLedger,
    StructuredHessian,
    average_hessian,
    dense_average_hessian,
    fnv1a64,
    obliviousness_audit,
    point_hash,
    query,
    suboptimality_ratio,
)


def test_fnv1a64_reference_values():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C


def test_point_hash_is_stable_hex():
    w = np.array([1.0, -2.5, 0.0])
    digest = point_hash(w)
    assert len(digest) == 16
    assert digest == point_hash(w.copy())
    assert digest != point_hash(np.array([1.0, -2.5, 1e-300]))


def test_query_counts_and_records(chain):
    ledger = CallLedger(record_points=True)
    w = np.zeros(chain.dim)
    for i in (1, 3, 3, 2):
        query(chain, w, i, ledger)
    assert ledger.total == 4
    assert ledger.indices() == [1, 3, 3, 2]
    assert ledger.per_index_counts[3] == 2
    assert [e.t for e in ledger.entries] == [1, 2, 3, 4]
    assert np.array_equal(ledger.points()[0], w)


@pytest.mark.parametrize("index", [0, 5, -1, True, 1.0])
def test_query_rejects_bad_index(chain, index):
    ledger = CallLedger()
    with pytest.raises(InvalidQueryError):
        query(chain, np.zeros(chain.dim), index, ledger)
    assert ledger.total == 0


def test_query_rejects_wrong_dimension(chain):
    with pytest.raises(InvalidQueryError):
        query(chain, np.zeros(chain.dim + 1), 1, CallLedger())


def test_points_need_record_flag(chain):
    ledger = CallLedger(record_points=False)
    query(chain, np.zeros(chain.dim), 1, ledger)
    with pytest.raises(ValueError):
        ledger.points()


def test_ledger_csv(tmp_path, chain):
    ledger = CallLedger()
    query(chain, np.zeros(chain.dim), 2, ledger)
    path = ledger.to_csv(tmp_path / "ledger.csv")
    lines = path.read_bytes().decode("utf-8").split("\n")
    assert lines[0] == "t,index,point_hash"
    assert lines[1].startswith("1,2,")
    assert b"\r" not in path.read_bytes()


def test_suboptimality_ratio_endpoints(chain):
    assert suboptimality_ratio(chain, np.zeros(chain.dim)) == pytest.approx(1.0)
    assert suboptimality_ratio(chain, chain.optimum()) == pytest.approx(0.0, abs=1e-14)
    assert suboptimality_ratio(chain, np.full(chain.dim, np.nan)) == float("inf")


def test_suboptimality_ratio_degenerate():
    instance = SignFlipInstance(lam=1.0, n=2, signs=(1, -1))
    with pytest.raises(DegenerateInstanceError):
        suboptimality_ratio(instance, np.zeros(1))


def test_obliviousness_audit():
    assert obliviousness_audit([1, 2, 1], [1, 2, 1, 2])
    verdict = obliviousness_audit([1, 2, 2], [1, 2, 1, 2])
    assert not verdict
    assert verdict.step == 3
    too_long = obliviousness_audit([1, 2, 1], [1, 2])
    assert not too_long and too_long.step == 3


def test_structured_hessian_operations():
    terms = [(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0), (1, 1, 1.0)]
    h = StructuredHessian.from_terms(3, 0.5, terms)
    dense = np.array([[2.5, -1.0, 0.0], [-1.0, 3.5, 0.0], [0.0, 0.0, 0.5]])
    assert np.allclose(h.to_dense(), dense)
    x = np.array([1.0, 2.0, 3.0])
    assert np.allclose(h.matvec(x), dense @ x)
    assert h.is_symmetric()
    with pytest.raises(BudgetExceededError):
        h.to_dense(limit=2)


def test_structured_hessian_with_basis():
    basis = np.array([[0.0, 1.0, 0.0]])
    h = StructuredHessian.from_terms(3, 1.0, [(0, 0, 4.0)], basis=basis)
    assert h.core_dim == 1
    assert np.allclose(h.to_dense(), np.diag([1.0, 5.0, 1.0]))


def test_average_hessian_matches_dense(chain):
    w = np.zeros(chain.dim)
    hessians = [chain.component(i, w).hessian for i in range(1, chain.n + 1)]
    assert np.allclose(average_hessian(hessians).toarray(), dense_average_hessian(chain, w))
    with pytest.raises(ValueError):
        average_hessian([])
