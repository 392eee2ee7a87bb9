import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import tiny_bottleneck, tiny_mlp, tiny_residual
from widthscale.arch import (ArchSpec, Family, LayerSpec, ShortcutKind, arch_from_dict, arch_to_dict,
                             check_widths, count_params, count_params_real, get_preset, load_arch,
                             mlp, mobilenetv2, param_gradient, resnet18, resolve_shortcuts, round_width,
                             save_arch, uniform_widths, validate_widths, vgg11)
from widthscale.errors import DomainError, StructuralError


def test_hand_counted_mlp():
    # (4*3 + 3) + (3*2 + 2) + (2*2 + 2)
    assert count_params(tiny_mlp(), (3, 2)) == 29


@pytest.mark.parametrize("ratio, expected", [(0.25, 0.58e6), (0.75, 5.20e6), (2.0, 36.89e6)])
def test_vgg11_table_counts(ratio, expected):
    n = count_params(vgg11(), uniform_widths(vgg11(), ratio))
    assert abs(n - expected) / expected <= 0.02


def test_vgg11_quarter_widths():
    assert uniform_widths(vgg11(), 0.25) == (16, 32, 64, 64, 128, 128, 128, 128)


def test_resnet18_and_mobilenetv2_counts():
    assert abs(count_params(resnet18(), resnet18().default_widths) - 11.27e6) / 11.27e6 <= 0.02
    a = mobilenetv2()
    assert abs(count_params(a, uniform_widths(a, 2.0)) - 9.30e6) / 9.30e6 <= 0.02


def test_uniform_widths_identity_and_clamp():
    a = vgg11()
    assert uniform_widths(a, 1.0) == a.default_widths
    single = ArchSpec("one", Family.DENSE, (LayerSpec("dense"),), (5,), 2, (3,))
    assert uniform_widths(single, 0.1) == (1,)
    with pytest.raises(DomainError):
        uniform_widths(a, 0.0)


def test_round_width_half_away_from_zero():
    assert [round_width(x) for x in (0.3, 0.5, 1.5, 2.5, 8.4, 8.5)] == [1, 1, 2, 3, 8, 9]


def test_count_errors():
    a = tiny_mlp()
    with pytest.raises(StructuralError):
        count_params(a, (3,))
    with pytest.raises(DomainError):
        count_params(a, (3, 0))


def test_shortcut_kinds():
    a = tiny_residual()
    kinds = resolve_shortcuts(a, (3, 3, 3, 4, 4))
    assert kinds == [ShortcutKind.IDENTITY, ShortcutKind.CONV1X1]  # second block has stride 2
    assert resolve_shortcuts(a, (3, 3, 4, 4, 4))[0] is ShortcutKind.CONV1X1
    with pytest.raises(StructuralError):
        resolve_shortcuts(tiny_mlp(), (3, 2))


def test_mobilenetv2_default_shortcuts_identity_where_possible():
    a = mobilenetv2()
    from widthscale.arch import block_widths
    for (cin, cout, stride), kind in zip(block_widths(a, a.default_widths), resolve_shortcuts(a, a.default_widths)):
        assert (kind is ShortcutKind.IDENTITY) == (cin == cout and stride == 1)
    assert ShortcutKind.IDENTITY in resolve_shortcuts(a, a.default_widths)


def test_shortcut_toggle_adds_projection_exactly():
    # Block 0 of tinyres goes 3 -> 3; making its output 4 wide adds a 1x1 conv (3*4) and its norm (2*4),
    # on top of the ordinary growth of layer 2 by one channel.
    a = tiny_residual()
    base = (3, 3, 3, 4, 4)
    grown = (3, 3, 4, 4, 4)
    # Same growth with the shortcut kind held fixed, computed by hand:
    # layer 2 conv: 9*3*1 extra, its norm 2, layer 3 conv input: 9*1*4, block 1 projection input: 1*4.
    plain = 9 * 3 + 2 + 9 * 4 + 4
    assert count_params(a, grown) - count_params(a, base) == plain + 3 * 4 + 2 * 4


def test_validate_widths_reports():
    a = vgg11()
    assert validate_widths(a, a.default_widths) == []
    v = validate_widths(a, a.default_widths[:-1])
    assert len(v) == 1 and "length" in v[0].message
    w = list(a.default_widths)
    w[3] = 0
    v = validate_widths(a, w)
    assert len(v) == 1 and v[0].layer == 3
    with pytest.raises(DomainError):
        check_widths(a, w)


def test_count_real_matches_integer_and_gradient():
    for a in (vgg11(), resnet18(), mobilenetv2(), mlp(), tiny_bottleneck()):
        w = uniform_widths(a, 0.5)
        assert count_params_real(a, w) == count_params(a, w)
        x = np.asarray(w, dtype=float) + 0.3
        g = param_gradient(a, x)
        for l in range(len(x)):
            e = np.zeros(len(x))
            e[l] = 1e-3
            fd = (count_params_real(a, x + e) - count_params_real(a, x - e)) / 2e-3
            assert abs(fd - g[l]) <= 1e-6 * max(1.0, abs(g[l]))


@st.composite
def dense_arch_and_widths(draw):
    n = draw(st.integers(1, 5))
    norms = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    layers = tuple(LayerSpec("dense", norm=b) for b in norms)
    arch = ArchSpec("rand", Family.DENSE, layers, (draw(st.integers(1, 50)),), draw(st.integers(1, 20)),
                    (4,) * n)
    widths = draw(st.lists(st.integers(1, 200), min_size=n, max_size=n))
    return arch, widths


@st.composite
def conv_arch_and_widths(draw):
    preset = draw(st.sampled_from([vgg11(), mobilenetv2(), tiny_bottleneck()]))
    widths = draw(st.lists(st.integers(1, 300), min_size=preset.num_prunable, max_size=preset.num_prunable))
    return preset, widths


@given(st.one_of(dense_arch_and_widths(), conv_arch_and_widths()), st.data())
def test_count_strictly_increasing_in_each_width(case, data):
    arch, widths = case
    l = data.draw(st.integers(0, len(widths) - 1))
    bigger = list(widths)
    bigger[l] += 1
    if arch.family is Family.BOTTLENECK:
        # Holding shortcut kinds fixed, growth is strict; a kind flip is the ConvCut effect.
        if resolve_shortcuts(arch, widths) != resolve_shortcuts(arch, bigger):
            return
    assert count_params(arch, bigger) > count_params(arch, widths)


@given(conv_arch_and_widths())
def test_count_is_pure(case):
    arch, widths = case
    assert count_params(arch, widths) == count_params(arch, list(widths)) == count_params(arch, tuple(widths))


def test_presets_and_round_trip(tmp_path):
    for name in ("vgg11", "resnet18", "mobilenetv2", "mlp"):
        a = get_preset(name)
        assert arch_from_dict(json.loads(json.dumps(arch_to_dict(a)))) == a
        save_arch(a, tmp_path / f"{name}.json")
        assert load_arch(tmp_path / f"{name}.json") == a
    assert load_arch("vgg11") == vgg11()


def test_arch_file_rejects_unknown_fields():
    d = arch_to_dict(mlp())
    d["colour"] = "blue"
    with pytest.raises(StructuralError):
        arch_from_dict(d)


def test_arch_invariants():
    with pytest.raises(StructuralError):
        LayerSpec("conv")  # kernel missing
    with pytest.raises(StructuralError):
        LayerSpec("dense", kernel=(3, 3))
    with pytest.raises(StructuralError):
        ArchSpec("x", Family.DENSE, (LayerSpec("dense"),), (4,), 2, (3,), expansion_factor=6)
    with pytest.raises(StructuralError):
        ArchSpec("x", Family.BOTTLENECK, (LayerSpec("conv", kernel=(3, 3)),), (3, 8, 8), 2, (3,))
