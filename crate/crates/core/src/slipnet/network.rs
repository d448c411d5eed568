use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};

use super::{HistoryBuffer, NetworkWeights, INPUT_DIM, LAYOUT, LSTM1, LSTM2, OFFSETS, PARAM_COUNT, SEQ_LEN};
use crate::bicycle::SlipPair;

fn view(w: &NetworkWeights, index: usize) -> ArrayView2<'_, f64> {
    let t = LAYOUT[index];
    ArrayView2::from_shape((t.rows, t.cols), w.tensor(index)).expect("layout shape")
}

/// `exp` for activation kernels: Cody-Waite reduction and a degree-12
/// Taylor polynomial, written branch-free so slice loops vectorise.
/// Agrees with `f64::exp` to a few ulp on the clamped range.
#[inline(always)]
fn exp_kernel(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_164_9e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let x = x.clamp(-700.0, 700.0);
    let t = x * std::f64::consts::LOG2_E + SHIFTER;
    let k = t - SHIFTER;
    let r = x - k * LN2_HI - k * LN2_LO;
    let mut p = 1.0 / 479_001_600.0;
    for c in [
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let scale = (t.to_bits().wrapping_sub(SHIFTER.to_bits()).wrapping_add(1023)) << 52;
    p * f64::from_bits(scale)
}

fn sigmoid_in_place(xs: &mut [f64]) {
    for x in xs {
        *x = 1.0 / (1.0 + exp_kernel(-*x));
    }
}

#[inline(always)]
fn tanh_kernel(x: f64) -> f64 {
    1.0 - 2.0 / (exp_kernel(2.0 * x.clamp(-20.0, 20.0)) + 1.0)
}

fn tanh_in_place(xs: &mut [f64]) {
    for x in xs {
        *x = tanh_kernel(*x);
    }
}

/// Activates one row of gate pre-activations in place and writes the new
/// cell and hidden state.
#[inline(always)]
fn cell_update_generic(g: &mut [f64], prev: Option<&[f64]>, c_row: &mut [f64], h_row: &mut [f64]) {
    let hidden = c_row.len();
    let (ifg, o) = g.split_at_mut(3 * hidden);
    let (i_f, c_g) = ifg.split_at_mut(2 * hidden);
    sigmoid_in_place(i_f);
    tanh_in_place(c_g);
    sigmoid_in_place(o);
    let (i_g, f_g) = i_f.split_at(hidden);
    match prev {
        Some(prev) => {
            for j in 0..hidden {
                c_row[j] = f_g[j] * prev[j] + i_g[j] * c_g[j];
            }
        }
        None => {
            for j in 0..hidden {
                c_row[j] = i_g[j] * c_g[j];
            }
        }
    }
    for j in 0..hidden {
        h_row[j] = o[j] * tanh_kernel(c_row[j]);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn cell_update_avx2(g: &mut [f64], prev: Option<&[f64]>, c_row: &mut [f64], h_row: &mut [f64]) {
    cell_update_generic(g, prev, c_row, h_row)
}

/// Same arithmetic either way (no FMA contraction), so results do not depend
/// on which path runs.
fn cell_update(g: &mut [f64], prev: Option<&[f64]>, c_row: &mut [f64], h_row: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { cell_update_avx2(g, prev, c_row, h_row) };
    }
    cell_update_generic(g, prev, c_row, h_row)
}

/// Activations kept from a forward pass for backpropagation. Sequence
/// tensors are time-major: row `t * batch + b`.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub batch: usize,
    input: Array2<f64>,
    gates1: Array2<f64>,
    cells1: Array2<f64>,
    hidden1: Array2<f64>,
    gates2: Array2<f64>,
    cells2: Array2<f64>,
    hidden2: Array2<f64>,
    dense: [Array2<f64>; 3],
    pub output: Array2<f64>,
}

impl ForwardCache {
    pub fn slips(&self) -> Vec<SlipPair> {
        self.output.rows().into_iter().map(|r| SlipPair::new(r[0], r[1])).collect()
    }
}

fn build_input(histories: &[HistoryBuffer], w: &NetworkWeights) -> Array2<f64> {
    let b = histories.len();
    let mut input = Array2::zeros((SEQ_LEN * b, INPUT_DIM));
    for t in 0..SEQ_LEN {
        for (j, h) in histories.iter().enumerate() {
            let x = w.normalizer.apply(h.features(t));
            let mut row = input.row_mut(t * b + j);
            for i in 0..INPUT_DIM {
                row[i] = x[i];
            }
        }
    }
    input
}

/// Runs one LSTM layer with zero initial state. Returns the activated gates
/// `(i, f, g, o)`, the cell states and the hidden states, all time-major.
fn lstm_forward(
    input: &Array2<f64>,
    batch: usize,
    w_ih: ArrayView2<'_, f64>,
    w_hh: ArrayView2<'_, f64>,
    bias: &[f64],
    hidden: usize,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let mut gates = input.dot(&w_ih.t());
    for mut row in gates.rows_mut() {
        for (g, b) in row.iter_mut().zip(bias) {
            *g += b;
        }
    }
    let mut cells = Array2::<f64>::zeros((SEQ_LEN * batch, hidden));
    let mut hs = Array2::<f64>::zeros((SEQ_LEN * batch, hidden));
    for t in 0..SEQ_LEN {
        if t > 0 {
            let h_prev = hs.slice(s![(t - 1) * batch..t * batch, ..]);
            let mut g = gates.slice_mut(s![t * batch..(t + 1) * batch, ..]);
            general_mat_mul(1.0, &h_prev, &w_hh.t(), 1.0, &mut g);
        }
        let gate_block = gates.slice_mut(s![t * batch..(t + 1) * batch, ..]).into_slice().expect("contiguous gates");
        let cell_all = cells.as_slice_mut().expect("contiguous cells");
        let (before, current) = cell_all.split_at_mut(t * batch * hidden);
        let prev_block = (t > 0).then(|| &before[(t - 1) * batch * hidden..]);
        let h_block = hs.slice_mut(s![t * batch..(t + 1) * batch, ..]).into_slice().expect("contiguous hidden");
        for b in 0..batch {
            let g = &mut gate_block[b * 4 * hidden..(b + 1) * 4 * hidden];
            let prev = prev_block.map(|p| &p[b * hidden..(b + 1) * hidden]);
            let c_row = &mut current[b * hidden..(b + 1) * hidden];
            let h_row = &mut h_block[b * hidden..(b + 1) * hidden];
            cell_update(g, prev, c_row, h_row);
        }
    }
    (gates, cells, hs)
}

fn dense_forward(x: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>, b: &[f64], relu: bool) -> Array2<f64> {
    let mut z = x.dot(&w.t());
    for mut row in z.rows_mut() {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
            if relu && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    z
}

/// Forward pass over a batch, keeping every activation.
pub fn forward_cached(histories: &[HistoryBuffer], w: &NetworkWeights) -> ForwardCache {
    let batch = histories.len();
    let input = build_input(histories, w);
    let (gates1, cells1, hidden1) = lstm_forward(&input, batch, view(w, 0), view(w, 1), w.tensor(2), LSTM1);
    let (gates2, cells2, hidden2) = lstm_forward(&hidden1, batch, view(w, 3), view(w, 4), w.tensor(5), LSTM2);
    let last = hidden2.slice(s![(SEQ_LEN - 1) * batch.., ..]);
    let d1 = dense_forward(last, view(w, 6), w.tensor(7), true);
    let d2 = dense_forward(d1.view(), view(w, 8), w.tensor(9), true);
    let d3 = dense_forward(d2.view(), view(w, 10), w.tensor(11), true);
    let output = dense_forward(d3.view(), view(w, 12), w.tensor(13), false);
    ForwardCache { batch, input, gates1, cells1, hidden1, gates2, cells2, hidden2, dense: [d1, d2, d3], output }
}

/// Predicts slip angles for a batch of windows.
pub fn forward_batch(histories: &[HistoryBuffer], w: &NetworkWeights) -> Vec<SlipPair> {
    if histories.is_empty() {
        return Vec::new();
    }
    forward_cached(histories, w).slips()
}

/// Predicts the slip angles for one window.
pub fn forward(history: &HistoryBuffer, w: &NetworkWeights) -> SlipPair {
    forward_batch(std::slice::from_ref(history), w)[0]
}

/// Backpropagation through time for one LSTM layer. `d_hidden` is the
/// external gradient on every hidden state (time-major). Returns the
/// gradient on the layer input and writes parameter gradients into `grads`.
fn lstm_backward(
    input: &Array2<f64>,
    gates: &Array2<f64>,
    cells: &Array2<f64>,
    hs: &Array2<f64>,
    d_hidden: &Array2<f64>,
    batch: usize,
    hidden: usize,
    w_ih: ArrayView2<'_, f64>,
    w_hh: ArrayView2<'_, f64>,
    grads: [&mut [f64]; 3],
) -> Array2<f64> {
    let mut d_gates = Array2::<f64>::zeros(gates.raw_dim());
    let mut dh = Array2::<f64>::zeros((batch, hidden));
    let mut dc = Array2::<f64>::zeros((batch, hidden));
    for t in (0..SEQ_LEN).rev() {
        dh += &d_hidden.slice(s![t * batch..(t + 1) * batch, ..]);
        for b in 0..batch {
            let r = t * batch + b;
            let g = gates.row(r);
            let c = cells.row(r);
            let mut dg = d_gates.row_mut(r);
            for j in 0..hidden {
                let (i_g, f_g, c_g, o_g) = (g[j], g[hidden + j], g[2 * hidden + j], g[3 * hidden + j]);
                let tc = tanh_kernel(c[j]);
                let c_prev = if t > 0 { cells[[r - batch, j]] } else { 0.0 };
                let dh_v = dh[[b, j]];
                let d_o = dh_v * tc;
                let d_c = dc[[b, j]] + dh_v * o_g * (1.0 - tc * tc);
                dg[j] = d_c * c_g * i_g * (1.0 - i_g);
                dg[hidden + j] = d_c * c_prev * f_g * (1.0 - f_g);
                dg[2 * hidden + j] = d_c * i_g * (1.0 - c_g * c_g);
                dg[3 * hidden + j] = d_o * o_g * (1.0 - o_g);
                dc[[b, j]] = d_c * f_g;
            }
        }
        if t > 0 {
            let dg_t = d_gates.slice(s![t * batch..(t + 1) * batch, ..]);
            general_mat_mul(1.0, &dg_t, &w_hh, 0.0, &mut dh);
        }
    }
    let [g_ih, g_hh, g_b] = grads;
    let d_w_ih = d_gates.t().dot(input);
    g_ih.copy_from_slice(d_w_ih.as_standard_layout().as_slice().expect("standard layout"));
    let later = d_gates.slice(s![batch.., ..]);
    let earlier = hs.slice(s![..(SEQ_LEN - 1) * batch, ..]);
    let d_w_hh = later.t().dot(&earlier);
    g_hh.copy_from_slice(d_w_hh.as_standard_layout().as_slice().expect("standard layout"));
    let d_b = d_gates.sum_axis(Axis(0));
    g_b.copy_from_slice(d_b.as_slice().expect("contiguous"));
    d_gates.dot(&w_ih)
}

fn split_grads(grads: &mut [f64]) -> Vec<&mut [f64]> {
    let mut out = Vec::with_capacity(LAYOUT.len());
    let mut rest = grads;
    for i in 0..LAYOUT.len() {
        let (head, tail) = rest.split_at_mut(OFFSETS[i + 1] - OFFSETS[i]);
        out.push(head);
        rest = tail;
    }
    out
}

/// Gradient of `sum_b <d_output[b], output[b]>` with respect to every
/// parameter, in [`LAYOUT`] order.
pub fn backprop(cache: &ForwardCache, d_output: &Array2<f64>, w: &NetworkWeights) -> Vec<f64> {
    let batch = cache.batch;
    let mut grads = vec![0.0; PARAM_COUNT];
    let mut parts = split_grads(&mut grads).into_iter();
    let mut next = || parts.next().expect("layout entry");
    let (g_ih1, g_hh1, g_b1) = (next(), next(), next());
    let (g_ih2, g_hh2, g_b2) = (next(), next(), next());
    let dense_grads: Vec<(&mut [f64], &mut [f64])> = (0..4).map(|_| (next(), next())).collect();

    // dense stack, output layer first
    let inputs = [
        cache.hidden2.slice(s![(SEQ_LEN - 1) * batch.., ..]),
        cache.dense[0].view(),
        cache.dense[1].view(),
        cache.dense[2].view(),
    ];
    let mut delta = d_output.clone();
    let mut dense_grads = dense_grads;
    for layer in (0..4).rev() {
        let (gw, gb) = &mut dense_grads[layer];
        let x = inputs[layer];
        let dw = delta.t().dot(&x);
        gw.copy_from_slice(dw.as_standard_layout().as_slice().expect("standard layout"));
        gb.copy_from_slice(delta.sum_axis(Axis(0)).as_slice().expect("contiguous"));
        let mut d_x = delta.dot(&view(w, 6 + 2 * layer));
        if layer > 0 {
            // ReLU derivative from the stored post-activation
            d_x.zip_mut_with(&cache.dense[layer - 1], |d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        delta = d_x;
    }

    let mut d_hidden2 = Array2::<f64>::zeros((SEQ_LEN * batch, LSTM2));
    d_hidden2.slice_mut(s![(SEQ_LEN - 1) * batch.., ..]).assign(&delta);
    let d_hidden1 = lstm_backward(
        &cache.hidden1,
        &cache.gates2,
        &cache.cells2,
        &cache.hidden2,
        &d_hidden2,
        batch,
        LSTM2,
        view(w, 3),
        view(w, 4),
        [g_ih2, g_hh2, g_b2],
    );
    lstm_backward(
        &cache.input,
        &cache.gates1,
        &cache.cells1,
        &cache.hidden1,
        &d_hidden1,
        batch,
        LSTM1,
        view(w, 0),
        view(w, 1),
        [g_ih1, g_hh1, g_b1],
    );
    grads
}
