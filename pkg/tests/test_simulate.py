import math

import numpy as np
import pytest
from scipy.special import ndtr

from synth import constant_mobility, reference_model, sweep_mobility
from v2vprop.fading import FadingModel
from v2vprop.stats import DistributionFit, autocorr
from v2vprop.simulate import (
    BinnedMetric,
    MobilityTrace,
    PacketLog,
    PhyConfig,
    abs_error,
    initial_fading_state,
    ipg95_by_bin,
    log_to_dataset,
    per_by_bin,
    sample_link_gain,
    simulate_run,
)
from v2vprop.trace import loss_census

EXP_DB_STD = 10.0 / np.log(10.0) * np.pi / np.sqrt(6.0)  # dB std of exp(1) power


def _rayleigh_fading():
    return FadingModel(
        fit=DistributionFit("nakagami_power", {"m": 1.0}, 0.0, 1.0),
        sigma_mp=float(EXP_DB_STD),
        acf_max_abs=0.0,
        window_p=50,
    )


def _zero_shadow_model():
    model = reference_model()
    model.sigma_sh1 = 0.0
    model.sigma_sh2 = 0.0
    return model


class TestSampleLinkGain:
    def test_point_mass_returns_median(self):
        model = _zero_shadow_model()
        rng = np.random.default_rng(0)
        state = initial_fading_state(model, 100.0, rng)
        pl, _ = sample_link_gain(model, 100.0, state, rng)
        assert pl == pytest.approx(float(model.median_db(100.0)), abs=1e-12)

    def test_continuity_across_breakpoint(self):
        model = _zero_shadow_model()
        rng = np.random.default_rng(1)
        state = initial_fading_state(model, model.d_br, rng)
        lo, state = sample_link_gain(model, model.d_br - 1e-6, state, rng)
        hi, _ = sample_link_gain(model, model.d_br + 1e-6, state, rng)
        assert abs(lo - hi) < 0.01

    def test_total_scatter_matches_quadrature_sum(self):
        # Independent draws at fixed distance: shadow (4 dB) plus Rayleigh
        # multipath (5.57 dB) combine to sqrt(4^2 + 5.57^2) = 6.86 dB.
        model = reference_model(sigma1=4.0, sigma2=4.0)
        model.fading = _rayleigh_fading()
        rng = np.random.default_rng(42)
        d = 150.0
        median = float(model.median_db(d))
        values = np.empty(100_000)
        for i in range(values.size):
            state = initial_fading_state(model, d, rng)
            values[i], state = sample_link_gain(model, d, state, rng)
        expected = math.hypot(4.0, EXP_DB_STD)
        assert values.std() == pytest.approx(expected, abs=0.15)
        # dB mean of exp(1) power is -10*gamma/ln(10)
        exp_db_mean = -10.0 * np.euler_gamma / np.log(10.0)
        assert values.mean() == pytest.approx(median + exp_db_mean, abs=0.05)

    def test_out_of_range_rejected(self):
        model = reference_model()
        rng = np.random.default_rng(2)
        state = initial_fading_state(model, 50.0, rng)
        with pytest.raises(ValueError, match="outside"):
            sample_link_gain(model, 5.0, state, rng)
        with pytest.raises(ValueError, match="outside"):
            sample_link_gain(model, 900.0, state, rng, d_max=800.0)


class TestSimulateRun:
    def test_huge_power_no_losses(self):
        model = _zero_shadow_model()
        phy = PhyConfig(tx_power=80.0, rate=10.0, noise_floor=-96.0)
        log = simulate_run(model, sweep_mobility(10.0, 500.0, 2, 100.0), phy, seed=3)
        assert log.received.all()
        assert per_by_bin(log).values  # non-empty
        assert all(v == 0.0 for v in per_by_bin(log).values.values())

    def test_interference_rate_concentrates(self):
        model = _zero_shadow_model()
        phy = PhyConfig(
            tx_power=80.0, rate=100.0, noise_floor=-200.0, interference_loss_prob=0.3
        )
        log = simulate_run(model, constant_mobility(100.0, 1000.0), phy, seed=4)
        assert len(log) == 100_001
        loss_rate = 1.0 - log.received.mean()
        assert loss_rate == pytest.approx(0.3, abs=0.01)
        assert set(log.causes()) <= {"", "interference"}

    def test_noise_cause_below_floor(self):
        model = _zero_shadow_model()
        phy = PhyConfig(tx_power=20.0, rate=10.0, noise_floor=-50.0)  # absurd floor
        log = simulate_run(model, constant_mobility(1000.0, 10.0), phy, seed=5)
        assert not log.received.any()
        assert set(log.causes()) == {"noise"}

    def test_deterministic_given_seed(self, tmp_path):
        model = reference_model()
        model.fading = _rayleigh_fading()
        phy = PhyConfig(tx_power=20.0, rate=10.0, noise_floor=-96.0,
                        interference_loss_prob=0.1)
        mob = sweep_mobility(10.0, 1500.0, 3, 300.0)
        a = simulate_run(model, mob, phy, seed=77)
        b = simulate_run(model, mob, phy, seed=77)
        assert np.array_equal(a.rssi, b.rssi)
        assert np.array_equal(a.received, b.received)
        a.to_csv(tmp_path / "a.csv")
        b.to_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        c = simulate_run(model, mob, phy, seed=78)
        assert not np.array_equal(a.rssi, c.rssi)

    def test_empty_mobility_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            MobilityTrace(timestamps=np.array([]), distances=np.array([]))

    def test_shadow_spatial_correlation_gudmundson(self):
        # Constant speed, fading off: pl - median is the shadow process;
        # its ACF at lag L (L * step = d_corr) should be near exp(-1).
        model = reference_model(sigma1=5.0, sigma2=5.0)
        phy = PhyConfig(tx_power=20.0, rate=10.0, noise_floor=-500.0)
        d_corr = 25.0
        step = 0.5  # meters per packet (5 m/s at 10 Hz)
        duration = 20_000.0  # 2e5 packets: ACF standard error ~0.02 at this lag
        mob = MobilityTrace(
            timestamps=np.array([0.0, duration]),
            distances=np.array([100.0, 100.0 + duration * 5.0]),
        )
        log = simulate_run(model, mob, phy, seed=11, decorrelation_distance=d_corr)
        shadow = log.rssi - 20.0 - model.median_db(log.distances)
        lag = int(round(d_corr / step))
        acf = autocorr(shadow, lag)
        assert acf[lag] == pytest.approx(math.exp(-1.0), abs=0.05)

    def test_log_csv_round_trip(self, tmp_path):
        model = reference_model()
        phy = PhyConfig(tx_power=20.0, rate=10.0, noise_floor=-96.0)
        log = simulate_run(model, sweep_mobility(10.0, 1500.0, 2, 200.0), phy, seed=6)
        path = tmp_path / "log.csv"
        log.to_csv(path)
        back = PacketLog.from_csv(path)
        assert np.array_equal(back.timestamps, log.timestamps)
        assert np.array_equal(back.rssi, log.rssi)
        assert np.array_equal(back.received, log.received)
        assert np.array_equal(back.loss_cause, log.loss_cause)

    def test_log_to_dataset_reflects_losses(self):
        model = reference_model()
        phy = PhyConfig(tx_power=20.0, rate=10.0, noise_floor=-96.0)
        log = simulate_run(model, sweep_mobility(100.0, 1900.0, 2, 400.0), phy, seed=8)
        n_lost = int((~log.received).sum())
        assert n_lost > 0  # far sweeps meet the noise floor
        ds = log_to_dataset(log, tx_power=20.0)
        assert len(ds) == int(log.received.sum())
        # census over the full range recovers interior losses
        rx = np.flatnonzero(log.received)
        interior = int((~log.received[rx[0]: rx[-1] + 1]).sum())
        census = loss_census(ds, np.arange(0.0, 2000.1, 2000.0))
        assert sum(c.lost for c in census) == interior


class TestBinnedMetrics:
    def _log(self, distances, received, rate=10.0):
        n = len(distances)
        return PacketLog(
            timestamps=np.arange(n) / rate,
            distances=np.asarray(distances, dtype=float),
            rssi=np.full(n, -70.0),
            received=np.asarray(received, dtype=bool),
            loss_cause=np.where(received, 0, 1).astype(np.int8),
        )

    def test_per_simple_fraction(self):
        log = self._log([50.0] * 100, [True] * 90 + [False] * 10)
        per = per_by_bin(log, 40.0)
        assert per.values == {1: 0.10}

    def test_empty_bins_absent(self):
        log = self._log([50.0, 250.0], [True, True])
        per = per_by_bin(log, 40.0)
        assert set(per.values) == {1, 6}

    def test_per_matches_gaussian_tail_oracle(self):
        # Fixed distance, Gaussian scatter, hard threshold: PER is the
        # closed-form tail probability.
        model = reference_model(sigma1=5.0, sigma2=5.0)
        d = 300.0
        median_rssi = 20.0 + float(model.median_db(d))
        floor = median_rssi - 5.0  # one sigma below the median
        phy = PhyConfig(tx_power=20.0, rate=100.0, noise_floor=floor)
        # Dither the distance so the traveled-distance shadow decorrelates
        # packet to packet (a literally constant distance freezes it).
        mob = sweep_mobility(d - 1.0, d + 1.0, 1000, 1000.0)
        log = simulate_run(model, mob, phy, seed=13, decorrelation_distance=1e-6)
        per = per_by_bin(log, 40.0)
        oracle = float(ndtr((floor - median_rssi) / 5.0))
        assert per.values[int(d // 40)] == pytest.approx(oracle, abs=0.01)

    def test_ipg_zero_loss(self):
        log = self._log([50.0] * 100, [True] * 100)
        ipg = ipg95_by_bin(log, 40.0)
        assert ipg.values[1] == pytest.approx(0.1, abs=1e-12)

    def test_ipg_alternating_loss(self):
        log = self._log([50.0] * 100, [True, False] * 50)
        ipg = ipg95_by_bin(log, 40.0)
        assert ipg.values[1] == pytest.approx(0.2, abs=1e-12)

    def test_ipg_geometric_oracle(self):
        # i.i.d. loss at p=0.5, 10 Hz: the 95th-percentile gap is
        # 0.1 * ceil(log(0.05)/log(0.5)) = 0.5 s.
        rng = np.random.default_rng(17)
        received = rng.random(200_000) >= 0.5
        log = self._log([50.0] * 200_000, received)
        ipg = ipg95_by_bin(log, 40.0)
        oracle = 0.1 * math.ceil(math.log(0.05) / math.log(0.5))
        assert abs(ipg.values[1] - oracle) <= 0.1 + 1e-9

    def test_ipg_low_confidence_flag(self):
        log = self._log([50.0] * 10, [True] * 10)
        ipg = ipg95_by_bin(log, 40.0)
        assert ipg.flags[1] == "low_confidence"

    def test_abs_error_identity_and_values(self):
        a = BinnedMetric(40.0, {1: 0.12, 2: 0.5}, {})
        b = BinnedMetric(40.0, {1: 0.10, 3: 0.7}, {})
        err = abs_error(a, b)
        assert err.values == {1: pytest.approx(0.02)}
        same = abs_error(a, a)
        assert all(v == 0.0 for v in same.values.values())

    def test_abs_error_width_mismatch(self):
        a = BinnedMetric(40.0, {1: 0.1}, {})
        b = BinnedMetric(50.0, {1: 0.1}, {})
        with pytest.raises(ValueError, match="widths differ"):
            abs_error(a, b)

    def test_metric_csv_round_trip(self, tmp_path):
        metric = BinnedMetric(40.0, {1: 0.125, 4: 0.5}, {4: "low_confidence"})
        path = tmp_path / "m.csv"
        metric.to_csv(path)
        back = BinnedMetric.from_csv(path)
        assert back.bin_width == 40.0
        assert back.values == metric.values
        assert back.flags == metric.flags

    def test_two_seeds_agree_within_binomial_noise(self):
        model = reference_model(sigma1=5.0, sigma2=5.0)
        phy = PhyConfig(tx_power=20.0, rate=100.0, noise_floor=-96.0)
        mob = sweep_mobility(1201.0, 1439.0, 12, 6000.0)  # 6 bins, ~1e5 each
        per_a = per_by_bin(simulate_run(model, mob, phy, seed=21,
                                        decorrelation_distance=1e-6))
        per_b = per_by_bin(simulate_run(model, mob, phy, seed=22,
                                        decorrelation_distance=1e-6))
        err = abs_error(per_a, per_b)
        assert err.values
        assert max(err.values.values()) < 0.01


class TestMobilityTrace:
    def test_csv_round_trip(self, tmp_path):
        mob = sweep_mobility(10.0, 500.0, 3, 120.0)
        path = tmp_path / "mob.csv"
        mob.to_csv(path)
        back = MobilityTrace.from_csv(path)
        assert np.array_equal(back.timestamps, mob.timestamps)
        assert np.array_equal(back.distances, mob.distances)

    def test_validation(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            MobilityTrace(np.array([0.0, 0.0]), np.array([10.0, 20.0]))
        with pytest.raises(ValueError, match="positive"):
            MobilityTrace(np.array([0.0, 1.0]), np.array([10.0, -5.0]))

    def test_interpolation(self):
        mob = MobilityTrace(np.array([0.0, 10.0]), np.array([100.0, 200.0]))
        assert mob.distance_at(5.0) == pytest.approx(150.0)
