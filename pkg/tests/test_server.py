import numpy as np
import pytest

from fedpecd.design import DesignAllocation
from fedpecd.errors import DegenerateArmError, ProtocolError
from fedpecd.linalg import pinv
from fedpecd.messages import LocalEstimate, LocalEstimateUpload
from fedpecd.server import (
    GlobalModel,
    aggregate_init,
    aggregate_phase,
    allocate,
    build_roster,
)


def upload(agent, phase, entries):
    ests = [LocalEstimate(arm=a, theta_hat=np.asarray(v, dtype=float), pulls=f)
            for a, v, f in entries]
    return LocalEstimateUpload(agent=agent, phase=phase, estimates=ests)


class TestBuildRoster:
    def test_shared_single_arm(self):
        roster = build_roster([[0]] * 4)
        assert roster.union == [0]
        assert roster.members[0] == [0, 1, 2, 3]

    def test_disjoint_singletons(self):
        roster = build_roster([[2], [0], [1]])
        assert roster.union == [0, 1, 2]
        assert roster.members == {0: [1], 1: [2], 2: [0]}

    def test_matches_membership_scan(self, rng):
        for _ in range(20):
            sets = []
            for _ in range(5):
                size = int(rng.integers(1, 5))
                sets.append(sorted(rng.choice(6, size=size, replace=False).tolist()))
            roster = build_roster(sets)
            for a in roster.union:
                assert roster.members[a] == [i for i, s in enumerate(sets) if a in s]

    def test_empty_set_rejected(self):
        with pytest.raises(ProtocolError):
            build_roster([[0], []])


class TestAggregateInit:
    def test_single_agent_unit_psi_fixed_point(self):
        psi = np.array([0.6, 0.8])  # unit norm
        model = aggregate_init([upload(0, 0, [(0, psi, 1)])], m=1, k=1)
        theta, v = model.entries[0]
        np.testing.assert_allclose(v, np.outer(psi, psi), atol=1e-12)
        np.testing.assert_allclose(theta, psi, atol=1e-12)

    def test_two_orthogonal_unit_uploads(self):
        u = np.array([1.0, 0.0])
        w = np.array([0.0, 1.0])
        model = aggregate_init(
            [upload(0, 0, [(0, u, 1)]), upload(1, 0, [(0, w, 1)])], m=2, k=1
        )
        theta, v = model.entries[0]
        np.testing.assert_allclose(v, np.outer(u, u) + np.outer(w, w), atol=1e-12)
        np.testing.assert_allclose(theta, u + w, atol=1e-12)

    def test_scaling_one_upload_changes_only_the_mean(self):
        """The Gram uses normalized directions, so scaling an upload leaves
        V unchanged while the aggregated theta moves."""
        u = np.array([1.0, 0.0])
        w = np.array([0.6, 0.8])
        base = aggregate_init(
            [upload(0, 0, [(0, u, 1)]), upload(1, 0, [(0, w, 1)])], m=2, k=1
        )
        scaled = aggregate_init(
            [upload(0, 0, [(0, u, 1)]), upload(1, 0, [(0, 3 * w, 1)])], m=2, k=1
        )
        np.testing.assert_allclose(scaled.entries[0][1], base.entries[0][1], atol=1e-12)
        assert not np.allclose(scaled.entries[0][0], base.entries[0][0])

    def test_zero_upload_skipped_in_gram(self):
        u = np.array([1.0, 0.0])
        model = aggregate_init(
            [upload(0, 0, [(0, u, 1)]), upload(1, 0, [(0, np.zeros(2), 1)])],
            m=2, k=1,
        )
        theta, v = model.entries[0]
        np.testing.assert_allclose(v, np.outer(u, u), atol=1e-12)
        np.testing.assert_allclose(theta, u, atol=1e-12)

    def test_all_zero_arm_is_degenerate(self):
        with pytest.raises(DegenerateArmError):
            aggregate_init([upload(0, 0, [(0, np.zeros(2), 1)])], m=1, k=1)

    def test_missing_agent_rejected(self):
        with pytest.raises(ProtocolError):
            aggregate_init([upload(0, 0, [(0, np.array([1.0, 0.0]), 1)])], m=2, k=1)


def make_roster(active_sets):
    return build_roster(active_sets)


class TestAggregatePhase:
    def setup_method(self):
        psi = np.array([1.0, 0.0])
        self.psi = psi
        init = aggregate_init([upload(0, 0, [(0, psi, 1)])], m=1, k=1)
        self.prev = init

    def test_single_collinear_upload(self):
        c = 0.4
        model = aggregate_phase(
            [upload(0, 1, [(0, c * self.psi, 1)])],
            make_roster([[0]]),
            {0: {0: 1}},
            self.prev,
        )
        theta, v = model.entries[0]
        np.testing.assert_allclose(v, np.outer(self.psi, self.psi), atol=1e-12)
        np.testing.assert_allclose(theta, c * self.psi, atol=1e-12)

    def test_carry_over_when_no_uploads(self):
        model = aggregate_phase(
            [upload(0, 1, [])], make_roster([[0]]), {0: {0: 0}}, self.prev
        )
        assert model.entries[0] is self.prev.entries[0]

    def test_two_agents_same_direction(self):
        e = np.array([0.0, 1.0])
        c1, c2 = 0.5, 0.9
        roster = make_roster([[0], [0]])
        model = aggregate_phase(
            [upload(0, 1, [(0, c1 * e, 2)]), upload(1, 1, [(0, c2 * e, 2)])],
            roster,
            {0: {0: 2}, 1: {0: 2}},
            GlobalModel(phase=1, entries={0: (e, np.outer(e, e))}),
        )
        theta, v = model.entries[0]
        # f-weighted direction Gram: (2 + 2) e e' -> pinv = e e' / 4
        np.testing.assert_allclose(v, np.outer(e, e) / 4.0, atol=1e-12)
        np.testing.assert_allclose(theta, ((2 * c1 + 2 * c2) / 4.0) * e, atol=1e-12)

    def test_upload_outside_roster_rejected(self):
        with pytest.raises(ProtocolError):
            aggregate_phase(
                [upload(0, 1, [(1, self.psi, 1)])],
                make_roster([[0]]),
                {0: {0: 1}},
                self.prev,
            )

    def test_pull_count_mismatch_rejected(self):
        with pytest.raises(ProtocolError):
            aggregate_phase(
                [upload(0, 1, [(0, self.psi, 3)])],
                make_roster([[0]]),
                {0: {0: 1}},
                self.prev,
            )


class TestAggregationInvariants:
    def test_psd_and_range_consistency(self, rng):
        for _ in range(20):
            m, d = 3, 3
            uploads = []
            for i in range(m):
                entries = []
                for a in range(2):
                    psi = rng.normal(size=d)
                    psi /= np.linalg.norm(psi)
                    y = float(rng.normal())
                    entries.append((a, y * psi, 1))
                uploads.append(upload(i, 0, entries))
            model = aggregate_init(uploads, m=m, k=2)
            for a, (theta, v) in model.entries.items():
                w = np.linalg.eigvalsh(v)
                assert w.min() >= -1e-10
                np.testing.assert_allclose(v, v.T, atol=1e-10)
                residual = theta - v @ pinv(v) @ theta
                assert np.linalg.norm(residual) <= 1e-8

    def test_collinear_uploads_identity(self, rng):
        """All uploads scalar multiples of one unit vector e: the Gram
        collapses to e e' * sum(f) and theta is the f-weighted mean times e."""
        e = rng.normal(size=3)
        e /= np.linalg.norm(e)
        coeffs = [0.7, -0.3, 1.1]
        fs = [2, 3, 4]
        roster = make_roster([[0]] * 3)
        prev = GlobalModel(phase=1, entries={0: (e, np.outer(e, e))})
        uploads = [
            upload(i, 1, [(0, c * e, f)]) for i, (c, f) in enumerate(zip(coeffs, fs))
        ]
        model = aggregate_phase(
            uploads, roster, {i: {0: f} for i, f in enumerate(fs)}, prev
        )
        theta, v = model.entries[0]
        total = sum(fs)
        np.testing.assert_allclose(v, np.outer(e, e) / total, atol=1e-12)
        mean = sum(f * c for f, c in zip(fs, coeffs)) / total
        np.testing.assert_allclose(theta, mean * e, atol=1e-12)


class TestAllocate:
    def test_full_mass(self):
        alloc = DesignAllocation(pi=[{0: 1.0}])
        assert allocate(alloc, 8) == {0: {0: 8}}

    def test_zero_stays_zero(self):
        alloc = DesignAllocation(pi=[{0: 1.0, 1: 0.0}])
        assert allocate(alloc, 8)[0][1] == 0

    def test_ceiling(self):
        alloc = DesignAllocation(pi=[{0: 0.3, 1: 0.7}])
        counts = allocate(alloc, 8)[0]
        assert counts[0] == 3  # ceil(2.4)
        assert counts[1] == 6  # ceil(5.6)

    def test_budget_rounding_bound(self, rng):
        for _ in range(20):
            k = int(rng.integers(1, 6))
            weights = rng.dirichlet(np.ones(k))
            alloc = DesignAllocation(pi=[dict(enumerate(weights))])
            f_p = int(rng.integers(1, 100))
            counts = allocate(alloc, f_p)[0]
            assert sum(counts.values()) <= f_p + k
