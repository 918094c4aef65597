import os

import numpy as np
import pytest

from capfields.config import ConfigError, RunConfig, load_config, save_config
from capfields.edgraph import EDGraph, GraphMotion
from capfields.frames import Frame, frame_ids, load_frame, load_stream, save_frame
from capfields.records import (
    MotionPrior,
    MotionPriorWriter,
    RecordFormatError,
    graph_debug_dump,
    load_graph,
    load_motion_priors,
    save_graph,
)
from capfields.skeleton import SkeletonPose, default_humanoid
from capfields.transforms import DualQuaternion, Se3


def make_frame(fid, h=32, w=40, seed=0):
    rng = np.random.default_rng(seed + fid)
    rgb = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    depth = rng.integers(0, 3000, size=(h, w)).astype(np.float64) / 1000.0
    mh = np.zeros((h, w), dtype=bool)
    mo = np.zeros((h, w), dtype=bool)
    mh[: h // 2] = True
    mo[h // 2 + 2 :] = True
    return Frame(fid, rgb, depth, mh, mo, timestamp=float(fid))


class TestFrameStream:
    def test_roundtrip_bit_exact(self, tmp_path):
        d = str(tmp_path)
        fr = make_frame(0)
        save_frame(d, fr)
        back = load_frame(d, 0)
        assert np.array_equal(back.rgb, fr.rgb)
        assert np.array_equal(back.depth, fr.depth)  # depth was mm-quantized already
        assert np.array_equal(back.mask_human, fr.mask_human)
        assert np.array_equal(back.mask_object, fr.mask_object)
        # a second save of the loaded frame produces identical bytes
        d2 = str(tmp_path / "again")
        save_frame(d2, back)
        for suffix in (".rgb.png", ".depth.png", ".mhum.png", ".mobj.png"):
            a = open(os.path.join(d, "frames", "000000" + suffix), "rb").read()
            b = open(os.path.join(d2, "frames", "000000" + suffix), "rb").read()
            assert a == b

    def test_depth_mm_decode(self, tmp_path):
        d = str(tmp_path)
        fr = make_frame(0)
        fr.depth[:] = 0.0
        fr.depth[3, 4] = 1.5
        save_frame(d, fr)
        back = load_frame(d, 0)
        assert back.depth[3, 4] == 1.5

    def test_gap_in_ids_rejected(self, tmp_path):
        d = str(tmp_path)
        save_frame(d, make_frame(0))
        save_frame(d, make_frame(2))
        with pytest.raises(ValueError):
            frame_ids(d)

    def test_missing_plane(self, tmp_path):
        d = str(tmp_path)
        save_frame(d, make_frame(0))
        os.remove(os.path.join(d, "frames", "000000.depth.png"))
        with pytest.raises(FileNotFoundError, match="depth"):
            load_frame(d, 0)

    def test_stream_order(self, tmp_path):
        d = str(tmp_path)
        for fid in range(4):
            save_frame(d, make_frame(fid))
        ids = [f.frame_id for f in load_stream(d)]
        assert ids == [0, 1, 2, 3]

    def test_overlapping_masks_rejected(self):
        fr = make_frame(0)
        mh = fr.mask_human.copy()
        mh[:] = True
        with pytest.raises(ValueError):
            Frame(0, fr.rgb, fr.depth, mh, np.ones_like(mh))


class TestGraphRecords:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        g = EDGraph(rng.normal(size=(17, 3)), radius=0.08, knn_k=3)
        motions = [
            GraphMotion(t, np.stack([
                DualQuaternion.from_rotvec_trans(rng.normal(size=3), rng.normal(size=3)).packed()
                for _ in range(17)
            ]))
            for t in range(3)
        ]
        path = str(tmp_path / "graph.bin")
        save_graph(path, g, motions)
        g2, m2 = load_graph(path)
        assert np.array_equal(g2.nodes, g.nodes)
        assert g2.radius == g.radius and g2.knn_k == g.knn_k
        assert len(m2) == 3
        for a, b in zip(motions, m2):
            assert a.frame_id == b.frame_id
            assert np.array_equal(a.dqs, b.dqs)

    def test_bad_magic(self, tmp_path):
        path = str(tmp_path / "junk.bin")
        with open(path, "wb") as f:
            f.write(b"NOPE" + b"\x00" * 64)
        with pytest.raises(RecordFormatError):
            load_graph(path)

    def test_debug_dump_mentions_nodes(self):
        g = EDGraph(np.zeros((2, 3)) + [[0, 0, 0], [1, 0, 0]])
        text = graph_debug_dump(g, [GraphMotion.identity(0, 2)])
        assert "2 nodes" in text
        assert "frame 0" in text


class TestMotionPriorStream:
    def test_roundtrip_bit_exact(self, tmp_path):
        skel = default_humanoid()
        rng = np.random.default_rng(1)
        path = str(tmp_path / "motions.bin")
        priors = []
        with MotionPriorWriter(path, n_nodes=5, n_theta=72) as wr:
            for t in range(4):
                dqs = np.stack([
                    DualQuaternion.from_rotvec_trans(rng.normal(size=3), rng.normal(size=3)).packed()
                    for _ in range(5)
                ])
                p = MotionPrior(
                    t,
                    GraphMotion(t, dqs),
                    SkeletonPose(skel, rng.normal(size=72) * 0.1),
                    Se3.from_rotvec_trans(rng.normal(size=3) * 0.1, rng.normal(size=3)),
                )
                priors.append(p)
                wr.append(p)
        back = load_motion_priors(path, skel)
        assert len(back) == 4
        for a, b in zip(priors, back):
            assert a.frame_id == b.frame_id
            assert np.array_equal(a.graph_motion.dqs, b.graph_motion.dqs)
            assert np.array_equal(a.pose.theta, b.pose.theta)
            assert np.array_equal(a.object_pose.rotation, b.object_pose.rotation)
            assert np.array_equal(a.object_pose.translation, b.object_pose.translation)

    def test_frame_id_mismatch_rejected(self):
        skel = default_humanoid()
        with pytest.raises(ValueError):
            MotionPrior(1, GraphMotion.identity(0, 3), SkeletonPose(skel), Se3.identity())


class TestConfig:
    def test_defaults_roundtrip(self, tmp_path):
        cfg = RunConfig(frames=12, gamma=3.0)
        path = str(tmp_path / "config")
        save_config(path, cfg)
        back = load_config(path)
        assert back == cfg

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "config"
        p.write_text("bogus_key=1\n")
        with pytest.raises(ConfigError, match="bogus_key"):
            load_config(str(p))

    def test_bad_value_names_field(self, tmp_path):
        p = tmp_path / "config"
        p.write_text("frames=abc\n")
        with pytest.raises(ConfigError, match="frames"):
            load_config(str(p))

    def test_validation_names_field(self, tmp_path):
        p = tmp_path / "config"
        p.write_text("frames=0\n")
        with pytest.raises(ConfigError, match="frames"):
            load_config(str(p))

    def test_overrides(self):
        cfg = load_config(None, overrides={"seed": 9, "selector": "fixed"})
        assert cfg.seed == 9 and cfg.selector == "fixed"
