import numpy as np
import pytest

from ditlab import align, ndgrad as ng
from ditlab.errors import ConfigError, ShapeError
from ditlab.student import ActivationTrace, Student, StudentConfig
from ditlab.teacher import Teacher, TeacherConfig, TeacherOutputs


class IdentityWidthProjector:
    """Stub projector: pass hidden states straight through (widths must match)."""

    def __call__(self, h):
        return h


def make_trace(hidden_value, attn_values=()):
    trace = ActivationTrace()
    trace.hidden = [ng.Node(hidden_value, requires_grad=True)]
    trace.attn = [ng.Node(a, requires_grad=True) for a in attn_values]
    return trace


def trace_and_teacher(seed=0, bsz=3):
    scfg = StudentConfig(depth=4, width=64, heads=4)
    tcfg = TeacherConfig(depth=6, width=96, heads=4)
    student = Student(scfg, ng.Rng(seed))
    teacher = Teacher(tcfg, ng.Rng(seed + 1))
    teacher.freeze()
    rng = ng.Rng(seed + 2)
    x = rng.normal((bsz, 16, 16, 1)) * np.float32(0.5)
    t = rng.uniform((bsz,), 0.1, 0.9)
    labels = rng.integers((bsz,), 0, 8)
    _, trace = student.forward(x, t, labels)
    tout = teacher.encode(np.clip(x, -1, 1))
    return student, teacher, trace, tout


class TestRepaLoss:
    def test_perfect_alignment_is_minus_one(self):
        y = ng.Rng(0).normal((2, 5, 8))
        trace = make_trace(y.copy())
        cfg = align.AlignConfig(feature_depth=0)
        loss = align.repa_loss(trace, TeacherOutputs(y=y, attn=[]), IdentityWidthProjector(), cfg)
        assert float(loss.value) == pytest.approx(-1.0, abs=1e-6)

    def test_orthogonal_pairs_are_zero(self):
        h = np.zeros((1, 2, 2), np.float32)
        h[0, 0] = [1, 0]
        h[0, 1] = [0, 1]
        y = np.zeros((1, 2, 2), np.float32)
        y[0, 0] = [0, 1]
        y[0, 1] = [1, 0]
        loss = align.repa_loss(make_trace(h), TeacherOutputs(y=y, attn=[]),
                               IdentityWidthProjector(), align.AlignConfig(feature_depth=0))
        assert float(loss.value) == pytest.approx(0.0, abs=1e-7)

    def test_hand_example(self):
        # tokens: y = (1,0), (0,1); projected = (1,1)/sqrt(2), (1,0)
        h = np.array([[[1 / np.sqrt(2), 1 / np.sqrt(2)], [1.0, 0.0]]], np.float32)
        y = np.array([[[1.0, 0.0], [0.0, 1.0]]], np.float32)
        loss = align.repa_loss(make_trace(h), TeacherOutputs(y=y, attn=[]),
                               IdentityWidthProjector(), align.AlignConfig(feature_depth=0))
        assert float(loss.value) == pytest.approx(-0.35355, abs=1e-5)

    def test_bounds_on_random_instances(self):
        rng = ng.Rng(12)
        for _ in range(1000):
            h = rng.normal((2, 4, 6))
            y = rng.normal((2, 4, 6))
            loss = align.repa_loss(make_trace(h), TeacherOutputs(y=y, attn=[]),
                                   IdentityWidthProjector(), align.AlignConfig(feature_depth=0))
            assert -1.0 <= float(loss.value) <= 1.0

    def test_token_mismatch_raises(self):
        h = ng.Rng(0).normal((1, 4, 8))
        y = ng.Rng(1).normal((1, 5, 8))
        with pytest.raises(ShapeError):
            align.repa_loss(make_trace(h), TeacherOutputs(y=y, attn=[]),
                            IdentityWidthProjector(), align.AlignConfig(feature_depth=0))

    def test_projected_scale_invariance(self):
        y = ng.Rng(3).normal((2, 4, 8))
        h = ng.Rng(4).normal((2, 4, 8))
        base = align.repa_loss(make_trace(h), TeacherOutputs(y=y, attn=[]),
                               IdentityWidthProjector(), align.AlignConfig(feature_depth=0))
        for lam in (0.5, 2.0, 10.0):
            scaled = align.repa_loss(make_trace(h * np.float32(lam)), TeacherOutputs(y=y, attn=[]),
                                     IdentityWidthProjector(), align.AlignConfig(feature_depth=0))
            assert float(scaled.value) == pytest.approx(float(base.value), abs=1e-6)

    def test_gradients_reach_student_and_projector(self):
        student, _, trace, tout = trace_and_teacher()
        proj = align.Projector(student.cfg, TeacherConfig(), ng.Rng(9))
        loss = align.repa_loss(trace, tout, proj, align.AlignConfig())
        ng.backward(loss)
        assert np.abs(proj.params.adjoint("proj.w1")).max() > 0
        assert np.abs(student.params.adjoint("patch_embed.w")).max() > 0


def row_map(rows):
    """[N, N] rows -> [1, 1, N, N] attention tensor."""
    return np.asarray(rows, np.float32)[None, None]


class TestAttaLoss:
    def test_uniform_rows_give_ln2(self):
        uniform = row_map([[0.5, 0.5], [0.5, 0.5]])
        trace = make_trace(np.zeros((1, 2, 2), np.float32), [uniform])
        tout = TeacherOutputs(y=np.zeros((1, 2, 2), np.float32), attn=[uniform])
        cfg = align.AlignConfig(pair_set=((0, 0),), aligned_heads=1)
        loss = align.atta_loss(trace, tout, cfg)
        assert float(loss.value) == pytest.approx(np.log(2.0), abs=1e-5)

    def test_hand_example(self):
        student_rows = row_map([[0.6, 0.4], [0.6, 0.4]])
        teacher_rows = row_map([[0.8, 0.2], [0.8, 0.2]])
        trace = make_trace(np.zeros((1, 2, 2), np.float32), [student_rows])
        tout = TeacherOutputs(y=np.zeros((1, 2, 2), np.float32), attn=[teacher_rows])
        cfg = align.AlignConfig(pair_set=((0, 0),), aligned_heads=1)
        loss = align.atta_loss(trace, tout, cfg)
        assert float(loss.value) == pytest.approx(0.59192, abs=1e-4)

    def test_gibbs_floor_on_random_maps(self):
        rng = ng.Rng(5)
        for trial in range(50):
            logits_s = rng.normal((1, 2, 3, 3)) * np.float32(2.0)
            logits_t = rng.normal((1, 2, 3, 3)) * np.float32(2.0)
            s = ng.softmax_lastdim(ng.constant(logits_s)).value
            t = ng.softmax_lastdim(ng.constant(logits_t)).value
            trace = make_trace(np.zeros((1, 3, 3), np.float32), [s])
            tout = TeacherOutputs(y=np.zeros((1, 3, 3), np.float32), attn=[t])
            cfg = align.AlignConfig(pair_set=((0, 0),), aligned_heads=2)
            loss = float(align.atta_loss(trace, tout, cfg).value)
            floor = align.teacher_row_entropy(t, heads=2)
            assert loss >= floor - 1e-6

    def test_equality_at_exact_match_and_perturbation_increases(self):
        rng = ng.Rng(6)
        logits = rng.normal((1, 2, 4, 4))
        maps = ng.softmax_lastdim(ng.constant(logits)).value
        trace = make_trace(np.zeros((1, 4, 4), np.float32), [maps])
        tout = TeacherOutputs(y=np.zeros((1, 4, 4), np.float32), attn=[maps.copy()])
        cfg = align.AlignConfig(pair_set=((0, 0),), aligned_heads=2)
        at_match = float(align.atta_loss(trace, tout, cfg).value)
        assert at_match == pytest.approx(align.teacher_row_entropy(maps, 2), abs=1e-6)
        perturbed = ng.softmax_lastdim(ng.constant(logits + rng.normal((1, 2, 4, 4)) * np.float32(0.5))).value
        trace2 = make_trace(np.zeros((1, 4, 4), np.float32), [perturbed])
        assert float(align.atta_loss(trace2, tout, cfg).value) > at_match

    def test_empty_pair_set_rejected(self):
        with pytest.raises(ConfigError):
            align.AlignConfig(pair_set=()).validate(StudentConfig(), TeacherConfig())

    def test_gradient_flows_to_student_attention_only(self):
        student, teacher, trace, tout = trace_and_teacher(seed=2)
        proj = align.Projector(student.cfg, teacher.cfg, ng.Rng(3))
        loss = align.atta_loss(trace, tout, align.AlignConfig())
        ng.backward(loss)
        assert np.abs(student.params.adjoint("block1.attn.wq")).max() > 0
        # attention alignment must not touch the projector
        assert np.abs(proj.params.adjoint("proj.w1")).max() == 0
        # frozen teacher holds no adjoints
        assert all(node.grad is None for _, node in teacher.params.items())


class TestHybridLoss:
    def test_zero_weights_zero_loss(self):
        _, _, trace, tout = trace_and_teacher(seed=4)
        proj = align.Projector(StudentConfig(), TeacherConfig(), ng.Rng(5))
        res = align.hybrid_loss(trace, tout, proj, align.AlignConfig(lambda_repa=0, lambda_atta=0))
        assert float(res.total.value) == 0.0
        assert res.repa is None and res.atta is None

    def test_weighted_sum(self):
        _, _, trace, tout = trace_and_teacher(seed=7)
        proj = align.Projector(StudentConfig(), TeacherConfig(), ng.Rng(8))
        cfg = align.AlignConfig(lambda_repa=0.5, lambda_atta=0.5)
        res = align.hybrid_loss(trace, tout, proj, cfg)
        expected = 0.5 * float(res.repa.value) + 0.5 * float(res.atta.value)
        assert float(res.total.value) == pytest.approx(expected, abs=1e-6)

    def test_atta_zero_matches_repa_only_bitwise(self):
        _, _, trace, tout = trace_and_teacher(seed=9)
        proj = align.Projector(StudentConfig(), TeacherConfig(), ng.Rng(10))
        res = align.hybrid_loss(trace, tout, proj, align.AlignConfig(lambda_repa=0.7, lambda_atta=0.0))
        direct = ng.scale(align.repa_loss(trace, tout, proj, align.AlignConfig(lambda_repa=0.7, lambda_atta=0.0)), 0.7)
        assert res.total.value.tobytes() == direct.value.tobytes()

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError):
            align.AlignConfig(lambda_repa=-0.1)


class TestDefaultPairing:
    def test_paper_xl_preset(self):
        scfg = StudentConfig(depth=28, width=64, heads=16, patch=4, image_size=16)
        tcfg = TeacherConfig(depth=12, width=96, heads=12)
        cfg = align.default_pairing(scfg, tcfg, "paper-XL")
        assert cfg.feature_depth == 8
        assert cfg.pair_set == ((4, 8), (5, 9), (6, 10), (7, 11))
        assert cfg.aligned_heads == 12

    def test_paper_b_preset(self):
        scfg = StudentConfig(depth=12, width=64, heads=16)
        tcfg = TeacherConfig(depth=12, width=96, heads=12)
        cfg = align.default_pairing(scfg, tcfg, "paper-B")
        assert cfg.feature_depth == 5
        assert cfg.pair_set == ((2, 7), (3, 9), (4, 11))

    def test_desk_preset(self):
        cfg = align.default_pairing(StudentConfig(), TeacherConfig(), "desk")
        assert cfg.feature_depth == 2
        assert cfg.pair_set == ((1, 4), (2, 5))
        assert cfg.aligned_heads == 4

    def test_out_of_range_rejected(self):
        shallow = StudentConfig(depth=2)
        with pytest.raises(ConfigError):
            align.default_pairing(shallow, TeacherConfig(), "desk")
        with pytest.raises(ConfigError):
            align.default_pairing(StudentConfig(), TeacherConfig(), "paper-XL")

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            align.default_pairing(StudentConfig(), TeacherConfig(), "desk-v2")
