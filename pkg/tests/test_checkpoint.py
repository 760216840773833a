import numpy as np
import pytest

from echonav.autodiff import Tensor
from echonav.checkpoint import load_checkpoint, restore_into, save_checkpoint
from echonav.policy import PolicyNetwork


class TestRoundTrip:
    def test_bit_exact(self, tmp_path, rng):
        named = [
            ("layer.w", Tensor(rng.standard_normal((7, 3)).astype(np.float32))),
            ("layer.b", Tensor(rng.standard_normal(3).astype(np.float32))),
            ("scalarish", Tensor(rng.standard_normal(1).astype(np.float32))),
        ]
        path = tmp_path / "ckpt.zip"
        save_checkpoint(path, named, meta={"n": 17, "note": "x"})
        tensors, meta = load_checkpoint(path)
        assert set(tensors) == {"layer.w", "layer.b", "scalarish"}
        for name, tensor in named:
            assert np.array_equal(tensors[name], tensor.data)
            assert tensors[name].dtype == np.float32
        assert meta["n"] == "17"
        assert meta["note"] == "x"

    def test_identical_content_gives_identical_bytes(self, tmp_path, rng):
        named = [("w", Tensor(rng.standard_normal((4, 4)).astype(np.float32)))]
        p1, p2 = tmp_path / "a.zip", tmp_path / "b.zip"
        save_checkpoint(p1, named, meta={"n": 1})
        save_checkpoint(p2, named, meta={"n": 1})
        assert p1.read_bytes() == p2.read_bytes()

    def test_policy_network_full_cycle(self, tmp_path):
        net = PolicyNetwork(num_heard=8, freq_bins=4, time_frames=4, ray_count=16,
                            init_seed=5)
        path = tmp_path / "net.zip"
        save_checkpoint(path, net.parameter_items(),
                        meta={"n": 3, "total_episodes": 10, "adversary_bound": 1.0})
        other = PolicyNetwork(num_heard=8, freq_bins=4, time_frames=4, ray_count=16,
                              init_seed=999)
        tensors, meta = load_checkpoint(path)
        restore_into(other, tensors)
        for (name, a), (_, b) in zip(net.parameter_items(), other.parameter_items()):
            assert np.array_equal(a.data, b.data), name
        assert int(meta["n"]) == 3

    def test_restore_rejects_name_mismatch(self, tmp_path, rng):
        net = PolicyNetwork(num_heard=8, freq_bins=4, time_frames=4, ray_count=16,
                            init_seed=5)
        path = tmp_path / "bad.zip"
        save_checkpoint(path, [("unknown.w", Tensor(np.zeros(3, np.float32)))])
        tensors, _ = load_checkpoint(path)
        with pytest.raises(ValueError):
            restore_into(net, tensors)

    def test_restore_rejects_shape_mismatch(self, tmp_path):
        net = PolicyNetwork(num_heard=8, freq_bins=4, time_frames=4, ray_count=16,
                            init_seed=5)
        items = net.parameter_items()
        path = tmp_path / "shape.zip"
        save_checkpoint(path, items)
        tensors, _ = load_checkpoint(path)
        tensors["actor.w"] = tensors["actor.w"][:, :2]
        with pytest.raises(ValueError):
            restore_into(net, tensors)

    def test_invalid_tensor_name_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            save_checkpoint(tmp_path / "x.zip",
                            [("has\ttab", Tensor(np.zeros(2, np.float32)))])

    def test_manifest_offsets_are_element_counts(self, tmp_path, rng):
        import zipfile

        named = [("a", Tensor(rng.standard_normal((2, 3)).astype(np.float32))),
                 ("b", Tensor(rng.standard_normal(4).astype(np.float32)))]
        path = tmp_path / "m.zip"
        save_checkpoint(path, named)
        with zipfile.ZipFile(path) as zf:
            manifest = zf.read("manifest.txt").decode().strip().splitlines()
        assert manifest[0] == "a\t2,3\t0"
        assert manifest[1] == "b\t4\t6"
