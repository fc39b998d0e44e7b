"""Tests for the relationship and temporal statistical attacks"""
import math

import numpy as np
import pytest

from components.attacks_stat import (
    ConfusionStats,
    SignificanceLevel,
    Tails,
    Verdict,
    approx_guard,
    min_exposing_curve,
    min_exposing_messages,
    min_exposing_messages_scan,
    min_rate_curve,
    min_rate_for_tda,
    min_rate_for_tda_scan,
    normal_quantile,
    recall_breakdown,
    rel_anon_test,
    relationship_scan,
    select_quantile,
    student_t_quantile,
    tda_scan,
    tda_test,
    z_statistic,
)
from components.fmd_model import DetectionRate, dyadic_rate
from components.network_data import MessageEvent, RateAssignment, degree_stats, graph_from_events
from components.simulator import Backend, FuzzyDownloads, SimulationRun, partition_epochs, simulate
from utils.errors import ArgumentError, DegenerateRateError


class TestQuantiles:
    def test_normal(self):
        assert normal_quantile(0.01) == pytest.approx(2.5758, abs=1e-4)
        assert normal_quantile(0.05, Tails.ONE) == pytest.approx(1.6449, abs=1e-4)

    def test_student_t(self):
        assert student_t_quantile(0.01, 29) == pytest.approx(2.7564, abs=1e-4)

    def test_normal_examples(self):
        assert normal_quantile(0.5, Tails.ONE) == pytest.approx(0.0, abs=1e-12)
        assert normal_quantile(0.05) == pytest.approx(1.959964, abs=1e-6)

    def test_student_t_limits(self):
        # Cauchy: P(|T| > 1) = 0.5 and the median is 0
        assert student_t_quantile(0.5, 1) == pytest.approx(1.0, abs=1e-9)
        assert student_t_quantile(0.5, 1, Tails.ONE) == pytest.approx(0.0, abs=1e-12)
        assert student_t_quantile(0.01, 10 ** 6) == pytest.approx(normal_quantile(0.01), abs=1e-3)

    @pytest.mark.parametrize("n,p,expected", [(100, 0.05, True), (10, 0.05, False), (6, 0.9, False)])
    def test_approx_guard(self, n, p, expected):
        assert approx_guard(n, p) is expected

    def test_selection(self):
        assert select_quantile(100, 0.01) == normal_quantile(0.01)
        assert select_quantile(30, 0.01) == student_t_quantile(0.01, 29)
        assert select_quantile(1, 0.01) == student_t_quantile(0.01, 1)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, 1.5, -0.1])
    def test_bad_alpha(self, alpha):
        with pytest.raises(ArgumentError):
            SignificanceLevel(alpha)


class TestRelAnonTest:
    def test_flagged_just_above_quantile(self):
        result = rel_anon_test(11, 100, DetectionRate(0.05))
        assert result.statistic == pytest.approx(2.753, abs=1e-3)
        assert result.verdict is Verdict.FLAGGED
        assert result.flagged

    def test_not_flagged_below_quantile(self):
        result = rel_anon_test(10, 100, DetectionRate(0.05))
        assert result.statistic == pytest.approx(2.294, abs=1e-3)
        assert result.verdict is Verdict.NOT_FLAGGED

    def test_silent_sender_is_inapplicable(self):
        assert rel_anon_test(0, 0, dyadic_rate(3)).verdict is Verdict.INAPPLICABLE

    def test_degenerate_rates(self):
        zero = rel_anon_test(1, 50, DetectionRate(0.0))
        assert zero.flagged and zero.degenerate
        assert not rel_anon_test(0, 50, DetectionRate(0.0)).flagged
        one = rel_anon_test(50, 50, DetectionRate(1.0))
        assert not one.flagged and one.degenerate

    def test_guard(self):
        assert not rel_anon_test(1, 10, DetectionRate(0.05)).guard_ok
        assert rel_anon_test(50, 1000, DetectionRate(0.05)).guard_ok

    def test_rejects_negative_counts(self):
        with pytest.raises(ArgumentError):
            rel_anon_test(-1, 10, DetectionRate(0.5))

    def test_z_statistic_degenerate(self):
        with pytest.raises(DegenerateRateError):
            z_statistic(1, 10, 0.0)
        with pytest.raises(DegenerateRateError):
            z_statistic(1, 10, 1.0)


class TestTdaTest:
    def test_detects_heavy_epoch(self):
        result = tda_test(416, 25000, dyadic_rate(7))
        assert result.statistic == pytest.approx(15.85, abs=0.01)
        assert result.flagged

    def test_quiet_epoch(self):
        result = tda_test(210, 25000, dyadic_rate(7))
        assert result.statistic == pytest.approx(1.05, abs=0.01)
        assert not result.flagged

    def test_empty_epoch(self):
        assert tda_test(0, 0, dyadic_rate(7)).verdict is Verdict.INAPPLICABLE


class TestMinimumExposure:
    def test_known_value(self):
        assert min_exposing_messages(100, DetectionRate(0.05), 0.01) == 6

    @pytest.mark.parametrize("out", [2, 5, 10, 30, 99, 100, 500, 1000])
    @pytest.mark.parametrize("l", [1, 2, 4, 7])
    def test_closed_form_matches_scan(self, out, l):
        rate = dyadic_rate(l)
        assert min_exposing_messages(out, rate) == min_exposing_messages_scan(out, rate)

    @staticmethod
    def _needed(out, rate, alpha=0.01):
        value = min_exposing_messages(out, rate, alpha)
        return math.inf if value is None else value

    @pytest.mark.parametrize("out", [30, 100, 300, 1000])
    def test_grows_with_rate(self, out):
        needed = [self._needed(out, dyadic_rate(l)) for l in range(7, 0, -1)]
        assert all(a <= b for a, b in zip(needed, needed[1:]))

    @pytest.mark.parametrize("out", [30, 100, 300, 1000])
    def test_grows_with_stricter_alpha(self, out):
        needed = [self._needed(out, dyadic_rate(3), alpha) for alpha in (0.1, 0.05, 0.01, 0.001)]
        assert all(a <= b for a, b in zip(needed, needed[1:]))

    def test_degenerate_rate(self):
        with pytest.raises(DegenerateRateError):
            min_exposing_messages(100, DetectionRate(0.0))

    def test_curve(self):
        frame = min_exposing_curve([10, 100, 1000], [1, 4, 7])
        assert list(frame.columns) == ["out", "exponent", "p", "min_messages"]
        assert len(frame) == 9
        row = frame[(frame["out"] == 1000) & (frame["exponent"] == 7)].iloc[0]
        assert row["min_messages"] == min_exposing_messages(1000, dyadic_rate(7))


class TestMinimumTdaRate:
    def test_known_values(self):
        assert min_rate_for_tda(25000, 50) == pytest.approx(0.014848, abs=1e-6)
        assert min_rate_for_tda(100, 100) == pytest.approx(0.9378, abs=1e-4)
        assert min_rate_for_tda(1000, 0) == 0.0

    @pytest.mark.parametrize("m_e,in_epoch", [(25000, 50), (25000, 200), (1000, 10), (100, 5)])
    def test_closed_form_matches_scan(self, m_e, in_epoch):
        closed = min_rate_for_tda(m_e, in_epoch)
        scanned = min_rate_for_tda_scan(m_e, in_epoch)
        assert closed - 1e-9 <= scanned <= closed + 2e-5

    @pytest.mark.parametrize("m_e", [100, 25000])
    def test_grows_with_genuine_messages(self, m_e):
        rates = [min_rate_for_tda(m_e, in_epoch) for in_epoch in range(0, m_e + 1, max(1, m_e // 100))]
        assert np.all(np.diff(rates) > 0)

    def test_in_above_epoch(self):
        with pytest.raises(ArgumentError):
            min_rate_for_tda(10, 11)

    def test_curve_skips_impossible_rows(self):
        frame = min_rate_curve([50, 25000], [10, 100])
        assert len(frame) == 3
        assert frame["min_rate"].between(0.0, 1.0).all()


class TestConfusionStats:
    def test_from_masks(self):
        stats = ConfusionStats.from_masks(np.array([1, 1, 0, 0], bool), np.array([1, 0, 1, 0], bool))
        assert (stats.true_positive, stats.false_positive, stats.false_negative, stats.true_negative) == (1, 1, 1, 1)
        assert stats.precision == 0.5
        assert stats.recall == 0.5
        assert stats.total == 4

    def test_empty_denominators(self):
        assert ConfusionStats().precision == 0.0
        assert ConfusionStats().recall == 0.0

    def test_merge(self):
        merged = ConfusionStats(1, 2, 3, 4).merge(ConfusionStats(1, 1, 1, 1))
        assert merged.to_dict()["true_negative"] == 5


class TestRelationshipScan:
    def test_rate_zero_is_perfect(self, small_graph, small_stats):
        rates = RateAssignment.from_values(np.zeros(small_graph.user_count))
        table = simulate(small_graph, rates, SimulationRun(1), stats=small_stats)
        scan = relationship_scan(table, small_stats, rates, unordered=True)
        assert scan.confusion.precision == 1.0
        assert scan.confusion.recall == 1.0
        assert scan.unordered.precision == 1.0
        assert scan.unordered.recall == 1.0

    def test_rate_one_hides_everything(self, small_graph, small_stats, uniform_rates):
        rates = uniform_rates(0)
        table = simulate(small_graph, rates, SimulationRun(1), stats=small_stats)
        scan = relationship_scan(table, small_stats, rates)
        assert scan.flagged_pairs == []
        assert scan.confusion.recall == 0.0

    def test_pair_counts(self, small_graph, small_stats, uniform_rates):
        rates = uniform_rates(3)
        table = simulate(small_graph, rates, SimulationRun(2), stats=small_stats)
        scan = relationship_scan(table, small_stats, rates, graph=small_graph, keep_rows=True)
        active = int(np.count_nonzero(small_stats.out_degree))
        assert scan.tested_pairs == active * (small_graph.user_count - 1)
        assert scan.confusion.total == scan.tested_pairs
        true_pairs = small_stats.pair_counts.nnz
        assert scan.confusion.true_positive + scan.confusion.false_negative == true_pairs
        assert scan.pair_frame["truth"].sum() == true_pairs
        assert scan.pair_frame["flagged"].sum() == len(scan.flagged_pairs)
        assert scan.metadata()["flagged_pairs"] == len(scan.flagged_pairs)

    def test_breakdown(self, small_graph, small_stats, uniform_rates):
        rates = uniform_rates(3)
        table = simulate(small_graph, rates, SimulationRun(2), stats=small_stats)
        scan = relationship_scan(table, small_stats, rates)
        recall_rows, precision_rows = recall_breakdown(scan.breakdown)
        assert recall_rows["pairs"].sum() == small_stats.pair_counts.nnz
        assert recall_rows["recall"].between(0.0, 1.0).all()
        assert precision_rows["rate"].tolist() == [0.125]
        assert precision_rows["precision"].iloc[0] == pytest.approx(scan.confusion.precision)


class TestTdaScan:
    def _partition(self, graph, rates):
        run = SimulationRun(4, 0, Backend.PER_MESSAGE)
        return partition_epochs(graph, FuzzyDownloads(graph, rates, run), 100)

    def test_rate_zero_is_perfect(self, small_graph):
        rates = RateAssignment.from_values(np.zeros(small_graph.user_count))
        scan = tda_scan(self._partition(small_graph, rates), rates)
        assert scan.confusion.precision == 1.0
        assert scan.confusion.recall == 1.0

    def test_rate_one_never_flags(self, small_graph, uniform_rates):
        rates = uniform_rates(0)
        scan = tda_scan(self._partition(small_graph, rates), rates)
        assert scan.confusion.true_positive + scan.confusion.false_positive == 0

    def test_rows(self, small_graph, uniform_rates):
        rates = uniform_rates(2)
        partition = self._partition(small_graph, rates)
        scan = tda_scan(partition, rates, graph=small_graph, keep_rows=True)
        assert set(scan.frame.columns) >= {"epoch", "user", "observed", "expected", "statistic", "flagged", "truth"}
        assert scan.frame["truth"].sum() == int(np.count_nonzero(partition.per_epoch_genuine))
        assert scan.confusion.total == partition.epoch_count * small_graph.user_count

    def test_flags_heavy_recipient(self):
        # one epoch of 25000 messages; user 0 receives 500 of them
        events = [MessageEvent(11, 0 if i < 500 else 1 + i % 10, i) for i in range(25000)]
        graph = graph_from_events(events)
        rates = RateAssignment.uniform(graph.user_count, dyadic_rate(7))
        partition = partition_epochs(graph, FuzzyDownloads(graph, rates, SimulationRun(9, 0, Backend.PER_MESSAGE)),
                                     25000)
        scan = tda_scan(partition, rates, graph=graph, keep_rows=True)
        row = scan.frame[scan.frame["user"] == 0].iloc[0]
        assert row["truth"] == 1
        assert row["flagged"] == 1
        assert row["statistic"] > 30


class TestSizeOfTests:
    """Flag rates on pairs with no genuine traffic, at alpha = 0.01"""

    ALPHA = 0.01

    @pytest.fixture(scope="class")
    def relationship(self):
        # sender 0 -> user 1 a thousand times; sender 2 -> users 3..10002 once each
        events = [MessageEvent(0, 1, t) for t in range(1000)]
        events += [MessageEvent(2, 3 + i, 1000 + i) for i in range(10000)]
        graph = graph_from_events(events)
        stats = degree_stats(graph)
        rates = RateAssignment.uniform(graph.user_count, DetectionRate(0.5))
        table = simulate(graph, rates, SimulationRun(21, 0, Backend.AGGREGATED), stats=stats)
        return relationship_scan(table, stats, rates, alpha=self.ALPHA)

    @pytest.fixture(scope="class")
    def epochs(self):
        # 500 senders, 20 messages each, all to user 0; 20 epochs of 500
        events = [MessageEvent(1 + i % 500, 0, i) for i in range(10000)]
        graph = graph_from_events(events)
        rates = RateAssignment.uniform(graph.user_count, DetectionRate(0.5))
        run = SimulationRun(22, 0, Backend.PER_MESSAGE)
        return rates, partition_epochs(graph, FuzzyDownloads(graph, rates, run), 500)

    def test_relationship_false_positive_rate(self, relationship):
        confusion = relationship.confusion
        negatives = confusion.false_positive + confusion.true_negative
        assert negatives >= 10000
        assert self.ALPHA / 2 <= confusion.false_positive / negatives <= 2 * self.ALPHA

    def test_single_messages_stay_hidden(self, relationship):
        single = relationship.breakdown[relationship.breakdown["exchanged"] == 1]
        assert single["pairs"].sum() == 10000
        assert single["flagged"].sum() / single["pairs"].sum() < 2 * self.ALPHA

    def test_epoch_test_size(self, epochs):
        rates, partition = epochs
        silent = partition.per_epoch_genuine == 0
        assert np.count_nonzero(silent) == 10000
        epoch_idx, users = np.nonzero(silent)
        flagged = [
            tda_test(int(partition.per_epoch_tags[e, u]), int(partition.epoch_sizes[e]), DetectionRate(0.5),
                     self.ALPHA).flagged
            for e, u in zip(epoch_idx, users)
        ]
        assert self.ALPHA / 2 <= np.mean(flagged) <= 2 * self.ALPHA

    def test_epoch_scan_size(self, epochs):
        rates, partition = epochs
        confusion = tda_scan(partition, rates, alpha=self.ALPHA).confusion
        negatives = confusion.false_positive + confusion.true_negative
        assert negatives == 10000
        # the scan keeps only the excess side of the two-tailed test
        assert self.ALPHA / 4 <= confusion.false_positive / negatives <= self.ALPHA
