//! The named model catalog: baselines plus every very deep CNN variant,
//! each pinned to one canonical layer arrangement that satisfies the
//! structural rules (filter/pool menus, channel schedule, small final map,
//! four hidden FC layers).

use super::{ActKind, ArchitectureSpec, LayerSpec, NetFamily};

fn conv(out_maps: usize, kt: usize, kf: usize) -> LayerSpec {
    LayerSpec::Conv {
        out_maps,
        kt,
        kf,
        pad_t: 0,
        pad_f: 0,
    }
}

fn conv_pad(out_maps: usize, kt: usize, kf: usize, pad_t: usize, pad_f: usize) -> LayerSpec {
    LayerSpec::Conv {
        out_maps,
        kt,
        kf,
        pad_t,
        pad_f,
    }
}

fn pool(pt: usize, pf: usize) -> LayerSpec {
    LayerSpec::Pool {
        pt,
        pf,
        truncate: false,
        stride: None,
    }
}

fn pool_trunc(pt: usize, pf: usize) -> LayerSpec {
    LayerSpec::Pool {
        pt,
        pf,
        truncate: true,
        stride: None,
    }
}

const RELU: LayerSpec = LayerSpec::Activation(ActKind::Relu);
const SIGMOID: LayerSpec = LayerSpec::Activation(ActKind::Sigmoid);
const FLATTEN: LayerSpec = LayerSpec::Flatten;

fn fc(out_dim: usize) -> LayerSpec {
    LayerSpec::Fc { out_dim }
}

/// Four hidden FC layers of 2048 plus the output layer.
fn fc_stack(act: LayerSpec, n_states: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for _ in 0..4 {
        layers.push(fc(2048));
        layers.push(act.clone());
    }
    layers.push(fc(n_states));
    layers
}

/// Interleaves ReLU after every conv in `convs`, keeping pools in place.
fn vdcnn_trunk(blocks: Vec<LayerSpec>) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for l in blocks {
        let is_conv = matches!(l, LayerSpec::Conv { .. });
        layers.push(l);
        if is_conv {
            layers.push(RELU);
        }
    }
    layers
}

fn vdcnn(name: &str, input: (usize, usize, usize), trunk: Vec<LayerSpec>, n_states: usize) -> ArchitectureSpec {
    let mut layers = vdcnn_trunk(trunk);
    layers.push(FLATTEN);
    layers.extend(fc_stack(RELU, n_states));
    ArchitectureSpec {
        name: name.into(),
        input_shape: input,
        layers,
        n_states,
        family: NetFamily::Vdcnn,
    }
}

/// Fully-connected baseline: 6 hidden layers of 2048 sigmoid nodes over the
/// 3-map context window.
pub fn dnn_baseline(n_states: usize) -> ArchitectureSpec {
    let mut layers = vec![FLATTEN];
    for _ in 0..6 {
        layers.push(fc(2048));
        layers.push(SIGMOID);
    }
    layers.push(fc(n_states));
    ArchitectureSpec {
        name: "dnn".into(),
        input_shape: (3, 11, 40),
        layers,
        n_states,
        family: NetFamily::Baseline,
    }
}

/// Standard shallow CNN: 256-map 9x9 conv with 1x3 pooling, a 3x4 conv,
/// then four FC layers.
pub fn cnn_baseline(n_states: usize) -> ArchitectureSpec {
    let mut layers = vec![
        conv(256, 9, 9),
        SIGMOID,
        pool_trunc(1, 3),
        conv(256, 3, 4),
        SIGMOID,
        FLATTEN,
    ];
    layers.extend(fc_stack(SIGMOID, n_states));
    ArchitectureSpec {
        name: "cnn".into(),
        input_shape: (3, 11, 40),
        layers,
        n_states,
        family: NetFamily::Baseline,
    }
}

/// 6 convolutions (5 of them 3-tall, bringing 11 frames to 1) with 2
/// frequency poolings: time 11>9>7>5>3>1, frequency 40>38>36>18>16>14>7>5>3.
pub fn vd6(n_states: usize) -> ArchitectureSpec {
    vdcnn(
        "vd6",
        (1, 11, 40),
        vec![
            conv(64, 3, 3),
            conv(64, 3, 3),
            pool(1, 2),
            conv(128, 3, 3),
            conv(128, 3, 3),
            pool(1, 2),
            conv(256, 3, 3),
            conv(256, 1, 3),
        ],
        n_states,
    )
}

/// Context window extended to 17 frames: 8 convolutions stacked in time.
pub fn t_ext(n_states: usize) -> ArchitectureSpec {
    vdcnn(
        "t-ext",
        (1, 17, 40),
        vec![
            conv(64, 3, 3),
            conv(64, 3, 3),
            pool(1, 2),
            conv(128, 3, 3),
            conv(128, 3, 3),
            conv(128, 3, 3),
            conv(128, 3, 3),
            conv(128, 3, 3),
            conv(128, 3, 3),
            pool(1, 2),
        ],
        n_states,
    )
}

/// FBANK enlarged to 64 dimensions: 10 convolutions stacked in frequency.
pub fn f_ext(n_states: usize) -> ArchitectureSpec {
    vdcnn(
        "f-ext",
        (1, 11, 64),
        vec![
            conv(64, 3, 3),
            conv(64, 3, 3),
            pool(1, 2),
            conv(128, 3, 3),
            conv(128, 3, 3),
            conv(128, 3, 3),
            conv(128, 1, 3),
            pool(1, 2),
            conv(256, 1, 3),
            conv(256, 1, 3),
            conv(256, 1, 3),
            conv(256, 1, 3),
        ],
        n_states,
    )
}

/// Extension in both axes, 17x64 input, 10 convolutional layers.
pub fn vd10(n_states: usize) -> ArchitectureSpec {
    vdcnn(
        "vd10",
        (1, 17, 64),
        vec![
            conv(64, 3, 3),
            conv(64, 3, 3),
            pool(1, 2),
            conv(128, 3, 3),
            conv(128, 3, 3),
            conv(128, 3, 3),
            conv(128, 3, 3),
            pool(1, 2),
            conv(256, 3, 3),
            conv(256, 3, 3),
            conv(256, 1, 3),
            conv(256, 1, 3),
        ],
        n_states,
    )
}

/// vd10 with the two pools widened to 2x2 (two temporal pooling stages) and
/// two extra 3x1 time convolutions inserted so the FC input size is
/// restored; truncating pools absorb the odd time extents.
pub fn vd10_tpool(n_states: usize) -> ArchitectureSpec {
    vdcnn(
        "vd10-tpool",
        (1, 17, 64),
        vec![
            conv(64, 3, 3),
            conv(64, 3, 3),
            pool_trunc(2, 2),
            conv(128, 3, 1),
            conv(128, 3, 1),
            conv(128, 1, 3),
            conv(128, 1, 3),
            conv(128, 1, 3),
            conv(128, 1, 3),
            pool_trunc(2, 2),
            conv(256, 1, 3),
            conv(256, 1, 3),
            conv(256, 1, 3),
            conv(256, 1, 3),
        ],
        n_states,
    )
}

/// Frequency padding on every convolution: frequency is reduced only by the
/// five 1x2 pools (64 down to 2), time stays unpadded (17 down to 1).
pub fn vd10_fpad(n_states: usize) -> ArchitectureSpec {
    vdcnn(
        "vd10-fpad",
        (1, 17, 64),
        vec![
            conv_pad(64, 3, 3, 0, 1),
            conv_pad(64, 3, 3, 0, 1),
            pool(1, 2),
            conv_pad(128, 3, 3, 0, 1),
            conv_pad(128, 3, 3, 0, 1),
            pool(1, 2),
            conv_pad(256, 3, 3, 0, 1),
            conv_pad(256, 3, 3, 0, 1),
            pool(1, 2),
            conv_pad(256, 3, 3, 0, 1),
            conv_pad(256, 3, 3, 0, 1),
            pool(1, 2),
            conv_pad(256, 1, 3, 0, 1),
            conv_pad(256, 1, 3, 0, 1),
            pool(1, 2),
        ],
        n_states,
    )
}

/// Padding on both axes; three 2x2 pools then two 1x2 pools take time
/// 17>8>4>2 and frequency 64>2, leaving a 2x2 final map.
pub fn vd10_fpad_tpad(n_states: usize) -> ArchitectureSpec {
    vdcnn(
        "vd10-fpad-tpad",
        (1, 17, 64),
        vec![
            conv_pad(64, 3, 3, 1, 1),
            conv_pad(64, 3, 3, 1, 1),
            pool_trunc(2, 2),
            conv_pad(128, 3, 3, 1, 1),
            conv_pad(128, 3, 3, 1, 1),
            pool_trunc(2, 2),
            conv_pad(256, 3, 3, 1, 1),
            conv_pad(256, 3, 3, 1, 1),
            pool_trunc(2, 2),
            conv_pad(256, 3, 3, 1, 1),
            conv_pad(256, 3, 3, 1, 1),
            pool(1, 2),
            conv_pad(256, 3, 3, 1, 1),
            conv_pad(256, 3, 3, 1, 1),
            pool(1, 2),
        ],
        n_states,
    )
}

pub fn catalog_names() -> &'static [&'static str] {
    &[
        "dnn",
        "cnn",
        "vd6",
        "t-ext",
        "f-ext",
        "vd10",
        "vd10-tpool",
        "vd10-fpad",
        "vd10-fpad-tpad",
    ]
}

pub fn catalog_spec(name: &str, n_states: usize) -> Option<ArchitectureSpec> {
    Some(match name {
        "dnn" => dnn_baseline(n_states),
        "cnn" => cnn_baseline(n_states),
        "vd6" => vd6(n_states),
        "t-ext" => t_ext(n_states),
        "f-ext" => f_ext(n_states),
        "vd10" => vd10(n_states),
        "vd10-tpool" => vd10_tpool(n_states),
        "vd10-fpad" => vd10_fpad(n_states),
        "vd10-fpad-tpad" => vd10_fpad_tpad(n_states),
        _ => return None,
    })
}

pub fn catalog(n_states: usize) -> Vec<ArchitectureSpec> {
    catalog_names()
        .iter()
        .map(|n| catalog_spec(n, n_states).unwrap())
        .collect()
}
