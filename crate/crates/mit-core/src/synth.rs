//! Synthetic multimodal tasks with controlled information structure: a
//! referring-segmentation world of colored shapes, an image/text claim
//! classifier, and a three-modality sentiment regression. Each generator is
//! deterministic per (n, seed, index) and ships a validator plus an
//! insufficiency oracle quantifying how far text alone can get.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::SplitMix64;

#[derive(Clone, Debug)]
pub struct SynthError(pub String);

impl core::fmt::Display for SynthError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "invalid synthetic sample: {}", self.0)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SynthError {}

// ── segmentation world ───────────────────────────────────────────────────

pub const SEG_IMG: usize = 32;
pub const SHAPE_NAMES: [&str; 4] = ["circle", "square", "triangle", "cross"];
pub const COLOR_NAMES: [&str; 6] = ["red", "green", "blue", "yellow", "magenta", "cyan"];
pub const COLOR_RGB: [[f64; 3]; 6] = [
    [0.85, 0.10, 0.10],
    [0.10, 0.80, 0.15],
    [0.15, 0.15, 0.85],
    [0.85, 0.80, 0.10],
    [0.80, 0.10, 0.80],
    [0.10, 0.80, 0.85],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlacedShape {
    pub shape: usize,
    pub color: usize,
    pub cy: usize,
    pub cx: usize,
    pub size: usize,
}

#[derive(Clone, Debug)]
pub struct SegSample {
    /// [32, 32, 3] pixels in [0,1].
    pub image: Vec<f64>,
    /// "{color} {shape}" of the unique matching shape.
    pub description: String,
    /// [32*32] binary mask of the matching shape.
    pub mask: Vec<f64>,
    pub shapes: Vec<PlacedShape>,
    pub target: usize,
}

/// Pixels covered by a shape; all inside the image by construction.
pub fn raster_shape(shape: usize, cy: usize, cx: usize, size: usize) -> Vec<(usize, usize)> {
    let (cy, cx, s) = (cy as i64, cx as i64, size as i64);
    let mut px = Vec::new();
    let mut push = |y: i64, x: i64| {
        debug_assert!((0..SEG_IMG as i64).contains(&y) && (0..SEG_IMG as i64).contains(&x));
        px.push((y as usize, x as usize));
    };
    match shape {
        0 => {
            // circle
            for y in cy - s..=cy + s {
                for x in cx - s..=cx + s {
                    if (y - cy).pow(2) + (x - cx).pow(2) <= s * s {
                        push(y, x);
                    }
                }
            }
        }
        1 => {
            // square
            for y in cy - s..=cy + s {
                for x in cx - s..=cx + s {
                    push(y, x);
                }
            }
        }
        2 => {
            // upward triangle: row r below the apex spans halfwidth r/2
            for r in 0..=2 * s {
                let hw = r / 2;
                for x in cx - hw..=cx + hw {
                    push(cy - s + r, x);
                }
            }
        }
        3 => {
            // plus-shaped cross, arm thickness 3
            for y in cy - s..=cy + s {
                for x in cx - 1..=cx + 1 {
                    push(y, x);
                }
            }
            for x in cx - s..=cx + s {
                for y in cy - 1..=cy + 1 {
                    if (x - cx).abs() > 1 {
                        push(y, x);
                    }
                }
            }
        }
        _ => panic!("shape index {shape} out of range"),
    }
    px
}

fn place_shapes(rng: &mut SplitMix64) -> Vec<PlacedShape> {
    // layout retries guarantee at least two disjoint shapes
    'layout: for _ in 0..100 {
        let want = 2 + rng.next_below(3); // 2..=4
        let mut combos: Vec<(usize, usize)> = Vec::new();
        for c in 0..COLOR_NAMES.len() {
            for s in 0..SHAPE_NAMES.len() {
                combos.push((c, s));
            }
        }
        let order = rng.shuffled_indices(combos.len());
        let mut occupied = vec![false; SEG_IMG * SEG_IMG];
        let mut placed = Vec::new();
        for &ci in &order {
            if placed.len() == want {
                break;
            }
            let (color, shape) = combos[ci];
            let mut ok = false;
            for _ in 0..40 {
                let size = 3 + rng.next_below(3); // 3..=5
                let lo = size + 1;
                let hi = SEG_IMG - size - 2;
                let cy = lo + rng.next_below(hi - lo + 1);
                let cx = lo + rng.next_below(hi - lo + 1);
                let px = raster_shape(shape, cy, cx, size);
                // keep a 1-pixel moat between shapes
                let clear = px.iter().all(|&(y, x)| {
                    (y.saturating_sub(1)..=(y + 1).min(SEG_IMG - 1)).all(|yy| {
                        (x.saturating_sub(1)..=(x + 1).min(SEG_IMG - 1))
                            .all(|xx| !occupied[yy * SEG_IMG + xx])
                    })
                });
                if clear {
                    for &(y, x) in &px {
                        occupied[y * SEG_IMG + x] = true;
                    }
                    placed.push(PlacedShape { shape, color, cy, cx, size });
                    ok = true;
                    break;
                }
            }
            if !ok && placed.len() < 2 {
                continue 'layout;
            }
        }
        if placed.len() >= 2 {
            return placed;
        }
    }
    unreachable!("two small shapes always fit in a 32x32 image");
}

fn render_scene(rng: &mut SplitMix64, shapes: &[PlacedShape]) -> Vec<f64> {
    let mut image = vec![0.0; SEG_IMG * SEG_IMG * 3];
    for v in image.iter_mut() {
        *v = rng.next_f64() * 0.12;
    }
    for s in shapes {
        let rgb = COLOR_RGB[s.color];
        for (y, x) in raster_shape(s.shape, s.cy, s.cx, s.size) {
            for c in 0..3 {
                let noisy = rgb[c] + (rng.next_f64() - 0.5) * 0.08;
                image[(y * SEG_IMG + x) * 3 + c] = noisy.clamp(0.0, 1.0);
            }
        }
    }
    image
}

pub fn gen_seg(n: usize, seed: u64) -> Vec<SegSample> {
    (0..n)
        .map(|i| {
            let mut rng = SplitMix64::new(SplitMix64::derive(seed, i as u64));
            let shapes = place_shapes(&mut rng);
            let image = render_scene(&mut rng, &shapes);
            let target = rng.next_below(shapes.len());
            let t = shapes[target];
            let description =
                format!("{} {}", COLOR_NAMES[t.color], SHAPE_NAMES[t.shape]);
            let mut mask = vec![0.0; SEG_IMG * SEG_IMG];
            for (y, x) in raster_shape(t.shape, t.cy, t.cx, t.size) {
                mask[y * SEG_IMG + x] = 1.0;
            }
            SegSample { image, description, mask, shapes, target }
        })
        .collect()
}

pub fn validate_seg(samples: &[SegSample]) -> Result<(), SynthError> {
    for (i, s) in samples.iter().enumerate() {
        let fail = |msg: String| Err(SynthError(format!("seg sample {i}: {msg}")));
        if s.image.len() != SEG_IMG * SEG_IMG * 3 || s.mask.len() != SEG_IMG * SEG_IMG {
            return fail(format!("bad buffer sizes {} / {}", s.image.len(), s.mask.len()));
        }
        if let Some(&v) = s.image.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return fail(format!("pixel {v} outside [0,1]"));
        }
        if !(2..=4).contains(&s.shapes.len()) {
            return fail(format!("{} shapes placed", s.shapes.len()));
        }
        for (a, sa) in s.shapes.iter().enumerate() {
            for sb in &s.shapes[a + 1..] {
                if (sa.color, sa.shape) == (sb.color, sb.shape) {
                    return fail(String::from("duplicate (color, shape) pair"));
                }
            }
        }
        let t = s.shapes.get(s.target).copied();
        let Some(t) = t else {
            return fail(String::from("target index out of range"));
        };
        let want = format!("{} {}", COLOR_NAMES[t.color], SHAPE_NAMES[t.shape]);
        if want != s.description {
            return fail(format!("description '{}' != target '{want}'", s.description));
        }
        let matches = s
            .shapes
            .iter()
            .filter(|p| (p.color, p.shape) == (t.color, t.shape))
            .count();
        if matches != 1 {
            return fail(format!("{matches} shapes match the description"));
        }
        let mut want_mask = vec![0.0; SEG_IMG * SEG_IMG];
        for (y, x) in raster_shape(t.shape, t.cy, t.cx, t.size) {
            want_mask[y * SEG_IMG + x] = 1.0;
        }
        if want_mask != s.mask {
            return fail(String::from("mask does not equal the target shape raster"));
        }
    }
    Ok(())
}

fn binary_dice(a: &[f64], b: &[f64]) -> f64 {
    let inter: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let total: f64 = a.iter().sum::<f64>() + b.iter().sum::<f64>();
    if total == 0.0 {
        1.0
    } else {
        2.0 * inter / total
    }
}

/// Best text-only DICE achievable by a fixed mask per description, with the
/// per-pixel mean estimated leave-one-out so small groups cannot memorize
/// themselves. This is the ceiling any image-blind predictor obeys.
pub fn seg_text_only_dice(samples: &[SegSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let px = SEG_IMG * SEG_IMG;
    let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        match groups.iter_mut().find(|(d, _)| *d == s.description.as_str()) {
            Some((_, v)) => v.push(i),
            None => groups.push((s.description.as_str(), vec![i])),
        }
    }
    let global_sum = {
        let mut acc = vec![0.0; px];
        for s in samples {
            for (a, &m) in acc.iter_mut().zip(&s.mask) {
                *a += m;
            }
        }
        acc
    };
    let thresholds: Vec<f64> = (1..20).map(|t| t as f64 / 20.0).collect();
    let mut best_total = 0.0;
    for (_, idx) in &groups {
        let mut sum = vec![0.0; px];
        for &i in idx {
            for (a, &m) in sum.iter_mut().zip(&samples[i].mask) {
                *a += m;
            }
        }
        // pick the threshold that maximizes the group's mean LOO DICE
        let mut best_group = 0.0;
        for &tau in &thresholds {
            let mut acc = 0.0;
            for &i in idx {
                let mask = &samples[i].mask;
                let pred: Vec<f64> = if idx.len() > 1 {
                    sum.iter()
                        .zip(mask)
                        .map(|(&s, &m)| f64::from((s - m) / (idx.len() - 1) as f64 >= tau))
                        .collect()
                } else {
                    // singleton group: fall back to the global mean
                    global_sum
                        .iter()
                        .zip(mask)
                        .map(|(&s, &m)| {
                            f64::from((s - m) / (samples.len().max(2) - 1) as f64 >= tau)
                        })
                        .collect()
                };
                acc += binary_dice(&pred, mask);
            }
            best_group = f64::max(best_group, acc / idx.len() as f64);
        }
        best_total += best_group * idx.len() as f64;
    }
    best_total / samples.len() as f64
}

// ── claim classification ─────────────────────────────────────────────────

pub const CLS_CLASSES: usize = 2;

#[derive(Clone, Debug)]
pub struct ClsSample {
    /// [32, 32, 3] pixels in [0,1].
    pub image: Vec<f64>,
    /// A presence claim, e.g. "there is a red circle".
    pub text: String,
    /// 1 if the claimed (color, shape) is in the scene, else 0.
    pub label: usize,
    pub shapes: Vec<PlacedShape>,
}

pub fn gen_cls(n: usize, seed: u64) -> Vec<ClsSample> {
    (0..n)
        .map(|i| {
            let mut rng = SplitMix64::new(SplitMix64::derive(seed, i as u64) ^ 0x1c5f);
            let shapes = place_shapes(&mut rng);
            let image = render_scene(&mut rng, &shapes);
            let truth = rng.next_below(2) == 1;
            let (color, shape) = if truth {
                let t = shapes[rng.next_below(shapes.len())];
                (t.color, t.shape)
            } else {
                loop {
                    let c = rng.next_below(COLOR_NAMES.len());
                    let s = rng.next_below(SHAPE_NAMES.len());
                    if shapes.iter().all(|p| (p.color, p.shape) != (c, s)) {
                        break (c, s);
                    }
                }
            };
            let text = format!("there is a {} {}", COLOR_NAMES[color], SHAPE_NAMES[shape]);
            ClsSample { image, text, label: usize::from(truth), shapes }
        })
        .collect()
}

pub fn validate_cls(samples: &[ClsSample]) -> Result<(), SynthError> {
    for (i, s) in samples.iter().enumerate() {
        let fail = |msg: String| Err(SynthError(format!("cls sample {i}: {msg}")));
        if s.image.len() != SEG_IMG * SEG_IMG * 3 {
            return fail(format!("bad image size {}", s.image.len()));
        }
        if s.label >= CLS_CLASSES {
            return fail(format!("label {} out of range", s.label));
        }
        let words: Vec<&str> = s.text.split(' ').collect();
        if words.len() != 5 || words[..3] != ["there", "is", "a"] {
            return fail(format!("malformed claim '{}'", s.text));
        }
        let color = COLOR_NAMES.iter().position(|&c| c == words[3]);
        let shape = SHAPE_NAMES.iter().position(|&c| c == words[4]);
        let (Some(color), Some(shape)) = (color, shape) else {
            return fail(format!("unknown color/shape in '{}'", s.text));
        };
        let present = s.shapes.iter().any(|p| (p.color, p.shape) == (color, shape));
        if usize::from(present) != s.label {
            return fail(format!("label {} contradicts the scene", s.label));
        }
    }
    Ok(())
}

// ── multimodal sentiment ─────────────────────────────────────────────────

pub const MSA_ACOUSTIC_DIM: usize = 8;
pub const MSA_FACIAL_DIM: usize = 6;
pub const MSA_MAX_STEPS: usize = 10;

const SENTIMENT_WORDS: [(&str, f64); 10] = [
    ("wonderful", 2.0),
    ("great", 1.5),
    ("good", 1.0),
    ("fine", 0.5),
    ("okay", 0.0),
    ("meh", -0.5),
    ("dull", -1.0),
    ("poor", -1.5),
    ("awful", -2.0),
    ("terrible", -2.5),
];
const FILLER_WORDS: [&str; 6] = ["the", "movie", "was", "really", "just", "so"];

/// Label mixing weights: text, acoustic, facial, noise scale.
pub const MSA_WEIGHTS: (f64, f64, f64, f64) = (0.5, 0.8, 0.6, 0.1);

// fixed per-channel loadings tying each hidden valence to its feature track
const ACOUSTIC_PATTERN: [f64; MSA_ACOUSTIC_DIM] = [0.9, -0.4, 0.0, 0.7, -0.8, 0.0, 0.3, -0.6];
const FACIAL_PATTERN: [f64; MSA_FACIAL_DIM] = [-0.7, 0.5, 0.9, 0.0, -0.3, 0.6];

#[derive(Clone, Copy, Debug)]
pub struct MsaLatent {
    pub text_valence: f64,
    pub acoustic_valence: f64,
    pub facial_valence: f64,
}

#[derive(Clone, Debug)]
pub struct MsaSample {
    pub text: String,
    /// [steps, 8] acoustic features.
    pub acoustic: Vec<f64>,
    /// [steps, 6] facial features.
    pub facial: Vec<f64>,
    pub steps: usize,
    /// Sentiment in [-3, 3].
    pub label: f64,
    pub latent: MsaLatent,
}

fn track(rng: &mut SplitMix64, steps: usize, valence: f64, pattern: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(steps * pattern.len());
    for _ in 0..steps {
        for &p in pattern {
            out.push(valence * p + rng.normal() * 0.3);
        }
    }
    out
}

pub fn gen_msa(n: usize, seed: u64) -> Vec<MsaSample> {
    (0..n)
        .map(|i| {
            let mut rng = SplitMix64::new(SplitMix64::derive(seed, i as u64) ^ 0x3a91);
            let n_fill = 1 + rng.next_below(3);
            let n_sent = 1 + rng.next_below(2);
            let mut words: Vec<&str> = (0..n_fill)
                .map(|_| FILLER_WORDS[rng.next_below(FILLER_WORDS.len())])
                .collect();
            let mut text_valence = 0.0;
            for _ in 0..n_sent {
                let (w, v) = SENTIMENT_WORDS[rng.next_below(SENTIMENT_WORDS.len())];
                words.push(w);
                text_valence += v;
            }
            text_valence /= n_sent as f64;
            let steps = 4 + rng.next_below(MSA_MAX_STEPS - 4 + 1);
            let acoustic_valence = (rng.next_f64() - 0.5) * 4.0;
            let facial_valence = (rng.next_f64() - 0.5) * 4.0;
            let acoustic = track(&mut rng, steps, acoustic_valence, &ACOUSTIC_PATTERN);
            let facial = track(&mut rng, steps, facial_valence, &FACIAL_PATTERN);
            let (wt, wa, wf, wn) = MSA_WEIGHTS;
            let raw = wt * text_valence
                + wa * acoustic_valence
                + wf * facial_valence
                + rng.normal() * wn;
            MsaSample {
                text: words.join(" "),
                acoustic,
                facial,
                steps,
                label: raw.clamp(-3.0, 3.0),
                latent: MsaLatent { text_valence, acoustic_valence, facial_valence },
            }
        })
        .collect()
}

pub fn validate_msa(samples: &[MsaSample]) -> Result<(), SynthError> {
    for (i, s) in samples.iter().enumerate() {
        let fail = |msg: String| Err(SynthError(format!("msa sample {i}: {msg}")));
        if s.steps == 0 || s.steps > MSA_MAX_STEPS {
            return fail(format!("bad step count {}", s.steps));
        }
        if s.acoustic.len() != s.steps * MSA_ACOUSTIC_DIM
            || s.facial.len() != s.steps * MSA_FACIAL_DIM
        {
            return fail(String::from("feature buffer sizes disagree with steps"));
        }
        if !s.label.is_finite() || !(-3.0..=3.0).contains(&s.label) {
            return fail(format!("label {} outside [-3,3]", s.label));
        }
        if s.acoustic.iter().chain(&s.facial).any(|v| !v.is_finite()) {
            return fail(String::from("non-finite feature"));
        }
        if s.text.is_empty()
            || !s.text.split(' ').any(|w| SENTIMENT_WORDS.iter().any(|&(sw, _)| sw == w))
        {
            return fail(format!("utterance '{}' has no sentiment word", s.text));
        }
    }
    // the hidden modal valences must actually move the labels
    let spread = |f: &dyn Fn(&MsaSample) -> f64| {
        let mean = samples.iter().map(|s| f(s)).sum::<f64>() / samples.len().max(1) as f64;
        samples.iter().map(|s| (f(s) - mean).powi(2)).sum::<f64>()
    };
    if samples.len() > 4 {
        if spread(&|s: &MsaSample| s.latent.acoustic_valence) == 0.0
            || spread(&|s: &MsaSample| s.latent.facial_valence) == 0.0
        {
            return Err(SynthError(String::from("a modal valence never varies")));
        }
    }
    Ok(())
}

/// Valence score a text-only model could extract: mean lexicon valence.
pub fn text_valence_of(text: &str) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for w in text.split(' ') {
        if let Some(&(_, v)) = SENTIMENT_WORDS.iter().find(|&&(sw, _)| sw == w) {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// In-sample MAE of a least-squares fit on the selected observable
/// modalities (text = lexicon valence; acoustic/facial = step means).
pub fn msa_ls_mae(
    samples: &[MsaSample],
    use_text: bool,
    use_acoustic: bool,
    use_facial: bool,
) -> f64 {
    assert!(!samples.is_empty(), "need samples for the regression oracle");
    let rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let mut row = vec![1.0];
            if use_text {
                row.push(text_valence_of(&s.text));
            }
            if use_acoustic {
                for c in 0..MSA_ACOUSTIC_DIM {
                    let m: f64 = (0..s.steps)
                        .map(|t| s.acoustic[t * MSA_ACOUSTIC_DIM + c])
                        .sum::<f64>()
                        / s.steps as f64;
                    row.push(m);
                }
            }
            if use_facial {
                for c in 0..MSA_FACIAL_DIM {
                    let m: f64 = (0..s.steps).map(|t| s.facial[t * MSA_FACIAL_DIM + c]).sum::<f64>()
                        / s.steps as f64;
                    row.push(m);
                }
            }
            row
        })
        .collect();
    let y: Vec<f64> = samples.iter().map(|s| s.label).collect();
    let beta = least_squares(&rows, &y);
    let mut mae = 0.0;
    for (row, &t) in rows.iter().zip(&y) {
        let pred: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
        mae += (pred - t).abs();
    }
    mae / samples.len() as f64
}

/// Ordinary least squares via ridge-stabilized normal equations.
fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = rows[0].len();
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for (row, &t) in rows.iter().zip(y) {
        for i in 0..k {
            for j in 0..k {
                xtx[i][j] += row[i] * row[j];
            }
            xty[i] += row[i] * t;
        }
    }
    for (i, r) in xtx.iter_mut().enumerate() {
        r[i] += 1e-9;
    }
    // Gaussian elimination with partial pivoting
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&a, &b| xtx[a][col].abs().partial_cmp(&xtx[b][col].abs()).unwrap())
            .unwrap();
        xtx.swap(col, pivot);
        xty.swap(col, pivot);
        let diag = xtx[col][col];
        for row in col + 1..k {
            let f = xtx[row][col] / diag;
            if f == 0.0 {
                continue;
            }
            for j in col..k {
                let upper = xtx[col][j];
                xtx[row][j] -= f * upper;
            }
            xty[row] -= f * xty[col];
        }
    }
    let mut beta = vec![0.0; k];
    for col in (0..k).rev() {
        let mut rhs = xty[col];
        for j in col + 1..k {
            rhs -= xtx[col][j] * beta[j];
        }
        beta[col] = rhs / xtx[col][col];
    }
    beta
}
