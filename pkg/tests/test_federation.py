import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcl_sim.contrastive import (
    AugmentationSpec,
    ContrastiveConfig,
    FeatureBatch,
    MemoryBank,
    bank_push,
    info_nce,
)
from fcl_sim.data import Dataset, PartitionSpec, SyntheticSpec, generate_synthetic, partition
from fcl_sim.exceptions import (
    ArchitectureMismatchError,
    ColdStartError,
    ConfigError,
    EmptyBankError,
    IntegrityError,
    ValidationError,
)
from fcl_sim.federation import (
    CSV_COLUMNS,
    DeviceState,
    FederatedPretrainer,
    FederationConfig,
    NegativesPolicy,
    RoundRecord,
    ServerState,
    build_remote_bank,
    collect_and_deidentify,
    device_rng,
    download_payload,
    fedavg,
    fedavg_weights,
    init_qcl,
    local_cl_round,
    qcl_update,
    run_pretraining,
    share_features,
    write_round_log,
)
from fcl_sim.numeric_core import ArchitectureConfig, forward, init_params, init_sgd

from conftest import feature_batch, unit_rows

ARCH = ArchitectureConfig((32,), 32)
CONTRASTIVE = ContrastiveConfig(feature_dim=4, batch_size=4, bank_capacity=16)


def constant_model(value, seed=0):
    params = init_params(3, ArchitectureConfig((4,), 4), feature_dim=2, seed=seed)
    for array in params.arrays():
        array.fill(value)
    return params


def device_datasets(n_devices=3, per_class=8, n_classes=3):
    data = generate_synthetic(
        SyntheticSpec(n_classes=n_classes, samples_per_class=per_class, grid=(4, 4, 1))
    )
    return partition(data, PartitionSpec(n_devices=n_devices, skew_param=0.5))


def federation(**kwargs):
    defaults = dict(n_devices=3, rounds=3, share_count=3, lr=0.05)
    defaults.update(kwargs)
    return FederationConfig(**defaults)


def assert_same_params(a, b, atol=0.0):
    assert a.architecture() == b.architecture()
    for x, y in zip(a.arrays(), b.arrays()):
        np.testing.assert_allclose(x, y, atol=atol, rtol=0)


class TestFedAvg:
    def test_single_update_is_identity(self):
        model = init_params(3, ArchitectureConfig((4,), 4), feature_dim=2, seed=4)
        assert_same_params(fedavg([(model, 7)]), model)

    def test_equal_models(self):
        out = fedavg([(constant_model(2.0), 2), (constant_model(2.0), 2)])
        for array in out.arrays():
            np.testing.assert_allclose(array, 2.0)

    def test_weighted_by_counts(self):
        out = fedavg([(constant_model(0.0), 1), (constant_model(4.0), 3)])
        for array in out.arrays():
            np.testing.assert_allclose(array, 3.0)

    def test_weights(self):
        np.testing.assert_allclose(fedavg_weights([1, 3]), [0.25, 0.75])

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(1, 500), min_size=2, max_size=6), st.integers(0, 10_000))
    def test_order_does_not_matter(self, sizes, seed):
        models = [
            init_params(3, ArchitectureConfig((4,), 4), feature_dim=2, seed=seed + i)
            for i in range(len(sizes))
        ]
        updates = list(zip(models, sizes))
        order = np.random.default_rng(seed).permutation(len(updates))
        assert_same_params(
            fedavg(updates), fedavg([updates[i] for i in order]), atol=1e-12
        )

    def test_errors(self):
        model = constant_model(1.0)
        with pytest.raises(ValidationError):
            fedavg([])
        with pytest.raises(ValidationError):
            fedavg([(model, 0)])
        other = init_params(3, ArchitectureConfig((5,), 4), feature_dim=2)
        with pytest.raises(ArchitectureMismatchError):
            fedavg([(model, 1), (other, 1)])


@pytest.fixture
def server():
    return ServerState(init_params(6, ARCH, feature_dim=3))


class TestServer:
    def test_foreign_origin_is_rejected(self, server, rng):
        with pytest.raises(IntegrityError):
            collect_and_deidentify(server, [(1, feature_batch(rng, 2, 3, origin=2))])

    def test_accepts_vector_lists(self, server, rng):
        batch = feature_batch(rng, 2, 3, origin=1)
        registry = collect_and_deidentify(server, [(1, batch.to_vectors())])
        np.testing.assert_array_equal(registry[1].values, batch.values)

    def test_registry_holds_copies(self, server, rng):
        batch = feature_batch(rng, 2, 3, origin=0)
        collect_and_deidentify(server, [(0, batch)])
        batch.values[:] = 0.0
        assert server.feature_registry[0].values.any()

    def test_remote_bank_excludes_own_device(self, server, rng):
        uploads = [(c, feature_batch(rng, 4, 3, origin=c)) for c in range(3)]
        collect_and_deidentify(server, uploads)

        bank = build_remote_bank(server, 0, np.random.default_rng(0))
        assert len(bank) == bank.capacity == 8
        assert 0 not in bank.origins.tolist()

        expected = np.concatenate([uploads[1][1].values, uploads[2][1].values])
        sort = lambda rows: rows[np.lexsort(rows.T[::-1])]
        np.testing.assert_array_equal(sort(bank.values), sort(expected))

    def test_remote_bank_shuffle_is_seeded(self, server, rng):
        collect_and_deidentify(server, [(c, feature_batch(rng, 4, 3, origin=c)) for c in range(3)])
        a = build_remote_bank(server, 1, np.random.default_rng(3))
        b = build_remote_bank(server, 1, np.random.default_rng(3))
        np.testing.assert_array_equal(a.values, b.values)

    def test_cold_start(self, server, rng):
        with pytest.raises(ColdStartError):
            build_remote_bank(server, 0, rng)
        collect_and_deidentify(server, [(0, feature_batch(rng, 2, 3, origin=0))])
        with pytest.raises(ColdStartError):
            build_remote_bank(server, 0, rng)

    def test_payload_is_anonymous(self, server, rng):
        collect_and_deidentify(server, [(c, feature_batch(rng, 2, 3, origin=c)) for c in range(3)])
        payload = download_payload(server, 2, rng)
        assert set(payload) == {"round", "features"}
        assert np.array(payload["features"]).shape == (4, 3)


class TestNegativesBank:
    @pytest.fixture
    def banks(self, rng):
        local = bank_push(MemoryBank(6, 3), feature_batch(rng, 4, 3, origin=0))
        remote = MemoryBank(
            8,
            3,
            FeatureBatch.concat(
                [feature_batch(rng, 4, 3, origin=1), feature_batch(rng, 4, 3, origin=2)], 3
            ),
        )
        return local, remote

    def test_initial_contents(self, banks):
        local, remote = banks
        np.testing.assert_array_equal(init_qcl("local_only", local).values, local.values)
        np.testing.assert_array_equal(
            init_qcl("local_plus_remote", local, remote).values, local.values
        )
        np.testing.assert_array_equal(init_qcl("remote_only", local, remote).values, remote.values)

    def test_init_copies(self, banks, rng):
        local, _ = banks
        qcl = init_qcl("local_only", local)
        bank_push(qcl, feature_batch(rng, 2, 3, origin=0))
        assert len(local) == 4

    def test_remote_policies_need_remote_bank(self, banks):
        local, _ = banks
        with pytest.raises(EmptyBankError):
            init_qcl("remote_only", local)
        with pytest.raises(EmptyBankError):
            init_qcl("local_plus_remote", local, MemoryBank(4, 3))

    def test_local_plus_remote_grows_by_two_batches(self, banks, rng):
        local, remote = banks
        qcl = init_qcl("local_plus_remote", local, remote, capacity=20)
        qcl_update("local_plus_remote", qcl, feature_batch(rng, 2, 3, origin=0), remote, 2, rng)
        assert len(qcl) == 8

    def test_remote_only_never_enqueues_local_keys(self, banks, rng):
        local, remote = banks
        qcl = init_qcl("remote_only", local, remote)
        for _ in range(5):
            qcl_update("remote_only", qcl, feature_batch(rng, 2, 3, origin=0), remote, 2, rng)
        assert 0 not in qcl.origins.tolist()

    def test_local_only_enqueues_keys(self, banks, rng):
        local, _ = banks
        qcl = init_qcl("local_only", local)
        keys = feature_batch(rng, 2, 3, origin=0)
        qcl_update("local_only", qcl, keys, None, 2, rng)
        np.testing.assert_array_equal(qcl.values[-2:], keys.values)


def make_device(dataset, params, device_id=0, weight_decay=0.0):
    return DeviceState(
        device_id,
        dataset,
        params.copy(),
        params.copy(),
        MemoryBank(16, params.feature_dim),
        init_sgd(params, lr=0.1, momentum=0.9, weight_decay=weight_decay),
    )


class TestLocalRound:
    def test_single_sample_step_matches_direct_loss(self, rng):
        data = Dataset(rng.uniform(0.0, 1.0, size=(1, 6)), np.array([0]), 2)
        params = init_params(6, ARCH, feature_dim=3, seed=2)
        device = make_device(data, params)
        negatives = feature_batch(rng, 5, 3, origin=1)
        qcl = bank_push(MemoryBank(16, 3), negatives)

        x = data.flat()
        q, _ = forward(params, x, "project")
        k, _ = forward(params, x, "project")
        expected, _, _ = info_nce(q[0], k[0], negatives.values, CONTRASTIVE.tau)

        cfg = federation(weight_decay=0.0)
        contrastive = ContrastiveConfig(feature_dim=3, batch_size=1, bank_capacity=16)
        _, loss = local_cl_round(
            device, qcl, contrastive, cfg, 0.1, rng, augmentation=AugmentationSpec.disabled()
        )

        assert loss == pytest.approx(expected, abs=1e-12)
        assert len(qcl) == 6
        np.testing.assert_allclose(qcl.values[-1], k[0], atol=1e-12)
        np.testing.assert_allclose(device.local_bank.values, k, atol=1e-12)
        assert device.local_bank.origins.tolist() == [0]

    def test_momentum_model_trails_main(self, rng):
        data = Dataset(rng.uniform(0.0, 1.0, size=(4, 6)), np.arange(4) % 2, 2)
        params = init_params(6, ARCH, feature_dim=3, seed=2)
        device = make_device(data, params)
        qcl = bank_push(MemoryBank(16, 3), feature_batch(rng, 5, 3, origin=1))
        contrastive = ContrastiveConfig(feature_dim=3, batch_size=4, bank_capacity=16)
        local_cl_round(device, qcl, contrastive, federation(), 0.1, rng)

        for start, main, mom in zip(params.arrays(), device.main_params.arrays(), device.momentum_params.arrays()):
            np.testing.assert_allclose(mom, 0.99 * start + 0.01 * main, atol=1e-12)

    def test_empty_partition(self, rng):
        data = Dataset(np.zeros((0, 6)), np.zeros(0), 2)
        device = make_device(data, init_params(6, ARCH, feature_dim=3))
        with pytest.raises(ValidationError):
            local_cl_round(device, MemoryBank(4, 3), CONTRASTIVE, federation(), 0.1, rng)

    def test_zero_local_epochs_is_rejected(self):
        with pytest.raises(ValidationError):
            federation(local_epochs=0)

    def test_device_bank_must_be_own(self, rng):
        data = Dataset(np.zeros((1, 6)), np.zeros(1), 2)
        params = init_params(6, ARCH, feature_dim=3)
        foreign = bank_push(MemoryBank(4, 3), feature_batch(rng, 1, 3, origin=5))
        with pytest.raises(ValidationError):
            DeviceState(0, data, params, params.copy(), foreign, init_sgd(params))

    def test_shared_features(self, rng):
        data = Dataset(rng.uniform(0.0, 1.0, size=(5, 6)), np.zeros(5), 2)
        device = make_device(data, init_params(6, ARCH, feature_dim=3), device_id=4)
        shared = share_features(device, 8, rng, round_index=2)
        assert len(shared) == 5
        assert set(shared.origins.tolist()) == {4}
        assert set(shared.birth_rounds.tolist()) == {2}
        np.testing.assert_allclose(np.linalg.norm(shared.values, axis=1), 1.0, atol=1e-12)

    def test_shared_features_from_augmented_views(self, rng):
        data = Dataset(rng.uniform(0.0, 1.0, size=(5, 4, 4, 1)), np.zeros(5), 2)
        device = make_device(data, init_params(16, ARCH, feature_dim=3), device_id=1)
        spec = AugmentationSpec.mild()

        clean = share_features(device, 8, np.random.default_rng(1))
        first = share_features(device, 8, np.random.default_rng(1), augmentation=spec)
        again = share_features(device, 8, np.random.default_rng(1), augmentation=spec)

        np.testing.assert_array_equal(first.values, again.values)
        assert not np.allclose(first.values, clean.values)
        assert set(first.origins.tolist()) == {1}
        np.testing.assert_allclose(np.linalg.norm(first.values, axis=1), 1.0, atol=1e-12)


class TestPretraining:
    def test_zero_rounds_returns_init(self):
        datasets = device_datasets()
        init = init_params(datasets[0].input_dim, ARCH, feature_dim=4, seed=1)
        params, records = run_pretraining(datasets, CONTRASTIVE, federation(rounds=0), init=init)
        assert records == []
        assert_same_params(params, init)

    def test_cold_start_then_remote_only(self):
        datasets = device_datasets()
        pretrainer = FederatedPretrainer(datasets, CONTRASTIVE, federation(), arch=ARCH)
        _, records = pretrainer.run()

        assert set(records[0].policies.values()) == {"local_only"}
        for record in records[1:]:
            assert set(record.policies.values()) == {"remote_only"}
            assert set(record.own_origin_in_qcl.values()) == {0}
            assert set(record.qcl_sizes.values()) == {(3 - 1) * 3}

    def test_every_device_active(self):
        datasets = device_datasets(n_devices=10, per_class=10, n_classes=5)
        cfg = federation(n_devices=10, rounds=1)
        _, records = run_pretraining(datasets, CONTRASTIVE, cfg, arch=ARCH)
        assert sorted(records[0].device_losses) == list(range(10))
        assert sum(records[0].agg_weights.values()) == pytest.approx(1.0, abs=1e-12)

    def test_partial_participation(self):
        cfg = federation(n_devices=10, active_ratio=0.25)
        assert cfg.n_active == 3
        datasets = device_datasets(n_devices=10, per_class=10, n_classes=5)
        pretrainer = FederatedPretrainer(datasets, CONTRASTIVE, cfg, arch=ARCH)
        chosen = pretrainer.select_devices(4)
        assert len(chosen) == 3 and chosen == sorted(chosen)
        assert chosen == pretrainer.select_devices(4)

    @pytest.mark.parametrize("policy", [p.value for p in NegativesPolicy])
    def test_same_seed_same_model(self, policy):
        datasets = device_datasets()
        cfg = federation(negatives_policy=policy, rounds=2)
        a, records_a = run_pretraining(datasets, CONTRASTIVE, cfg, arch=ARCH)
        b, records_b = run_pretraining(datasets, CONTRASTIVE, cfg, arch=ARCH)
        assert_same_params(a, b)
        assert [r.device_losses for r in records_a] == [r.device_losses for r in records_b]

    def test_threads_match_sequential(self):
        datasets = device_datasets()
        a, _ = run_pretraining(datasets, CONTRASTIVE, federation(rounds=2), arch=ARCH)
        b, _ = run_pretraining(datasets, CONTRASTIVE, federation(rounds=2, workers=2), arch=ARCH)
        assert_same_params(a, b)

    def test_isolated_devices_do_not_aggregate(self):
        datasets = device_datasets()
        cfg = federation(rounds=2, aggregate=False, share_features=False)
        pretrainer = FederatedPretrainer(datasets, CONTRASTIVE, cfg, arch=ARCH)
        global_params, records = pretrainer.run()
        assert all(r.agg_weights is None for r in records)
        assert all(set(r.policies.values()) == {"local_only"} for r in records)
        for device_params in pretrainer.device_params:
            assert not np.array_equal(device_params.arrays()[0], global_params.arrays()[0])

    def test_device_count_must_match(self):
        with pytest.raises(ConfigError):
            FederatedPretrainer(device_datasets(), CONTRASTIVE, federation(n_devices=4))

    def test_feature_dim_must_match(self):
        datasets = device_datasets()
        init = init_params(datasets[0].input_dim, ARCH, feature_dim=5)
        with pytest.raises(ConfigError):
            FederatedPretrainer(datasets, CONTRASTIVE, federation(), init=init)

    def test_run_round_past_the_end(self):
        pretrainer = FederatedPretrainer(device_datasets(), CONTRASTIVE, federation(rounds=1), arch=ARCH)
        pretrainer.run()
        with pytest.raises(ValidationError):
            pretrainer.run_round()

    def test_device_streams_are_independent(self):
        a = device_rng(0, 1, 2).random(4)
        assert not np.array_equal(a, device_rng(0, 2, 1).random(4))
        np.testing.assert_array_equal(a, device_rng(0, 1, 2).random(4))


class TestRoundLog:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            RoundRecord(0, 0.03, {0: 1.0, 1: 2.0}, {0: 3, 1: 3}, {0: "x", 1: "x"}, agg_weights={0: 0.5, 1: 0.4})

    def test_csv(self, tmp_path):
        records = [
            RoundRecord(0, 0.03, {0: 1.0, 1: 2.0}, {0: 3, 1: 4}, {0: "local_only", 1: "local_only"}, agg_weights={0: 0.25, 1: 0.75}),
            RoundRecord(1, 0.01, {0: 0.5, 1: 1.5}, {0: 6, 1: 6}, {0: "remote_only", 1: "remote_only"}),
        ]
        assert records[0].mean_loss == 1.5
        frame = pd.read_csv(write_round_log(records, tmp_path / "round_log.csv"))
        assert list(frame.columns) == CSV_COLUMNS
        assert len(frame) == 4
        assert frame["agg_weight"].iloc[:2].tolist() == [0.25, 0.75]
        assert frame["agg_weight"].iloc[2:].isna().all()


@pytest.mark.parametrize("bad", [{"negatives_policy": "everything"}, {"active_ratio": 0.0}, {"rounds": -1}])
def test_federation_config_errors(bad):
    with pytest.raises(ConfigError):
        federation(**bad)
