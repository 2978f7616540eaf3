//! Parametric templates for desk-scale triplets.
//!
//! Each family draws component values from small discrete grids. The image
//! feature vector is the family's anchor plus one "glyph" vector per chosen
//! value, with Gaussian noise, then re-normalized. The glyphs stand in for
//! the value annotations a schematic rendering carries.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::labels::label_index;
use super::manifest::{save_manifest, write_feature_file, Manifest, ManifestError, Split, TripletRecord};

#[derive(Debug, Clone, Copy)]
pub struct Slot {
    pub name: &'static str,
    pub choices: &'static [&'static str],
}

#[derive(Debug, Clone, Copy)]
pub struct Family {
    pub name: &'static str,
    pub label: &'static str,
    pub slots: &'static [Slot],
    render: fn(&[&str]) -> String,
    captions: fn(&[&str]) -> [String; 3],
}

impl Family {
    /// Number of distinct value tuples.
    pub fn capacity(&self) -> usize {
        self.slots.iter().map(|s| s.choices.len()).product()
    }

    pub fn label_index(&self) -> usize {
        label_index(self.label).expect("family label is in the vocabulary")
    }

    pub fn netlist(&self, values: &[&str]) -> String {
        (self.render)(values)
    }
}

const NMOS: &str = ".model nch nmos level=1 vto=0.5 kp=120u lambda=0.02\n";
const PMOS: &str = ".model pch pmos level=1 vto=-0.5 kp=40u lambda=0.02\n";

/// Doubles the numeric part of a width like `2u`.
fn double_width(w: &str) -> String {
    let split = w.find(|c: char| c.is_ascii_alphabetic()).unwrap_or(w.len());
    let n: f64 = w[..split].parse().expect("grid widths are numeric");
    format!("{}{}", n * 2.0, &w[split..])
}

fn cs_amp(v: &[&str]) -> String {
    let (rd, w, cl) = (v[0], v[1], v[2]);
    format!(
        "* common source amplifier\n{NMOS}VDD vdd 0 1.8\nVIN in 0 DC 0.8 AC 1\nRD vdd out {rd}\nM1 out in 0 0 nch W={w} L=1u\nCL out 0 {cl}\n.op\n.end\n"
    )
}

fn cs_amp_captions(v: &[&str]) -> [String; 3] {
    let (rd, w, cl) = (v[0], v[1], v[2]);
    [
        format!("Common-source amplifier with an NMOS input transistor W={w}, a {rd} drain resistor and a {cl} load capacitor."),
        format!("NMOS common source gain stage: drain load {rd}, device width {w}, output loaded by {cl}."),
        format!("Single-transistor common-source amplifier using a {rd} resistive load, W={w} and {cl} of output capacitance."),
    ]
}

fn diff_pair(v: &[&str]) -> String {
    let (rd, w, it) = (v[0], v[1], v[2]);
    format!(
        "* differential pair\n{NMOS}VDD vdd 0 1.8\nVINP inp 0 DC 0.9 AC 1\nVINN inn 0 DC 0.9\nR1 vdd outn {rd}\nR2 vdd outp {rd}\nM1 outn inp tail 0 nch W={w} L=1u\nM2 outp inn tail 0 nch W={w} L=1u\nITAIL tail 0 {it}\n.op\n.end\n"
    )
}

fn diff_pair_captions(v: &[&str]) -> [String; 3] {
    let (rd, w, it) = (v[0], v[1], v[2]);
    [
        format!("Resistively loaded NMOS differential pair with {rd} load resistors, W={w} input devices and a {it} tail current."),
        format!("Differential pair amplifier: two W={w} NMOS transistors biased by a {it} tail source, {rd} drain loads."),
        format!("Source-coupled NMOS pair with {it} tail bias, {rd} resistive loads and input width {w}."),
    ]
}

fn current_mirror(v: &[&str]) -> String {
    let (iref, w, rl) = (v[0], v[1], v[2]);
    format!(
        "* current mirror\n{NMOS}VDD vdd 0 1.8\nIREF vdd ref {iref}\nM1 ref ref 0 0 nch W={w} L=1u\nM2 out ref 0 0 nch W={w} L=1u\nRL vdd out {rl}\n.op\n.end\n"
    )
}

fn current_mirror_captions(v: &[&str]) -> [String; 3] {
    let (iref, w, rl) = (v[0], v[1], v[2]);
    [
        format!("Simple NMOS current mirror copying a {iref} reference current into a {rl} load, both transistors W={w}."),
        format!("Two-transistor current mirror with diode-connected reference device W={w}, {iref} input current and {rl} output load."),
        format!("NMOS current mirror biased at {iref}; matched W={w} devices drive a {rl} resistor."),
    ]
}

fn miller_opamp(v: &[&str]) -> String {
    let (cc, w2, it) = (v[0], v[1], v[2]);
    format!(
        "* two stage miller opamp\n{NMOS}{PMOS}VDD vdd 0 1.8\nVINP inp 0 DC 0.9 AC 1\nVINN inn 0 DC 0.9\nM1 x inn tail 0 nch W=4u L=1u\nM2 y inp tail 0 nch W=4u L=1u\nM3 x x vdd vdd pch W=8u L=1u\nM4 y x vdd vdd pch W=8u L=1u\nITAIL tail 0 {it}\nM5 out y vdd vdd pch W={w2} L=1u\nI2 out 0 100u\nCC y out {cc}\nCL out 0 2p\n.op\n.end\n"
    )
}

fn miller_opamp_captions(v: &[&str]) -> [String; 3] {
    let (cc, w2, it) = (v[0], v[1], v[2]);
    [
        format!("Two-stage op-amp with Miller compensation capacitor {cc}, {it} tail current and a W={w2} PMOS second stage."),
        format!("Miller-compensated two-stage operational amplifier: NMOS input pair with {it} bias, {cc} compensation, output device W={w2}."),
        format!("Two-stage CMOS op-amp, PMOS mirror load, common-source output stage W={w2}, Miller capacitor {cc}, tail bias {it}."),
    ]
}

fn rc_lowpass(v: &[&str]) -> String {
    let (r, c, rl) = (v[0], v[1], v[2]);
    format!("* rc lowpass\nVIN in 0 DC 0 AC 1\nR1 in out {r}\nC1 out 0 {c}\nRL out 0 {rl}\n.op\n.end\n")
}

fn rc_lowpass_captions(v: &[&str]) -> [String; 3] {
    let (r, c, rl) = (v[0], v[1], v[2]);
    [
        format!("First-order RC low-pass filter with a {r} series resistor, {c} shunt capacitor and {rl} load."),
        format!("Passive low-pass RC network: R={r}, C={c}, terminated in {rl}."),
        format!("RC lowpass filter made of a {r} resistor and a {c} capacitor driving a {rl} load resistor."),
    ]
}

fn wien_bridge(v: &[&str]) -> String {
    let (r, c, rf) = (v[0], v[1], v[2]);
    format!(
        "* wien bridge network\nVIN in 0 DC 0 AC 1\nR1 in a {r}\nC1 a out {c}\nR2 out 0 {r}\nC2 out 0 {c}\nRF out fb {rf}\nRG fb 0 10k\n.op\n.end\n"
    )
}

fn wien_bridge_captions(v: &[&str]) -> [String; 3] {
    let (r, c, rf) = (v[0], v[1], v[2]);
    [
        format!("Wien-bridge RC network with matched {r} resistors and {c} capacitors, feedback divider {rf} over 10k."),
        format!("Wien bridge frequency-selective network: series and parallel RC arms of {r} and {c}, gain resistor {rf}."),
        format!("RC Wien-bridge network using R={r} and C={c} in both arms plus a {rf} feedback resistor."),
    ]
}

fn ring_osc(v: &[&str]) -> String {
    let (n, w, cl) = (v[0], v[1], v[2]);
    let n: usize = n.parse().expect("stage count is an integer");
    let wp = double_width(w);
    let mut s = format!("* ring oscillator\n{NMOS}{PMOS}VDD vdd 0 1.8\n");
    for i in 0..n {
        let (a, b) = (i, (i + 1) % n);
        let _ = writeln!(s, "MP{i} n{b} n{a} vdd vdd pch W={wp} L=0.18u");
        let _ = writeln!(s, "MN{i} n{b} n{a} 0 0 nch W={w} L=0.18u");
        let _ = writeln!(s, "C{i} n{b} 0 {cl}");
    }
    s.push_str(".op\n.end\n");
    s
}

fn ring_osc_captions(v: &[&str]) -> [String; 3] {
    let (n, w, cl) = (v[0], v[1], v[2]);
    [
        format!("{n}-stage CMOS ring oscillator with NMOS width {w} and {cl} load on every stage."),
        format!("Ring oscillator built from {n} CMOS inverters in a loop, W={w} pull-down devices, {cl} per-stage capacitance."),
        format!("Inverter chain ring oscillator: {n} stages, NMOS W={w}, each node loaded by {cl}."),
    ]
}

fn divider(v: &[&str]) -> String {
    let (r1, r2, vin) = (v[0], v[1], v[2]);
    format!("* resistive divider\nVIN in 0 DC {vin}\nR1 in out {r1}\nR2 out 0 {r2}\n.op\n.end\n")
}

fn divider_captions(v: &[&str]) -> [String; 3] {
    let (r1, r2, vin) = (v[0], v[1], v[2]);
    [
        format!("Resistive voltage divider from a {vin}V supply with a {r1} top resistor and a {r2} bottom resistor."),
        format!("Two-resistor divider: R1={r1}, R2={r2}, input {vin}V."),
        format!("Voltage divider network of {r1} over {r2} driven by a {vin}V source."),
    ]
}

pub const FAMILIES: [Family; 8] = [
    Family {
        name: "cs_amp",
        label: "common_source_amplifier",
        slots: &[
            Slot { name: "rd", choices: &["2k", "5k", "10k", "20k", "50k"] },
            Slot { name: "w", choices: &["1u", "2u", "5u", "10u", "20u"] },
            Slot { name: "cl", choices: &["0.5p", "1p", "2p", "5p"] },
        ],
        render: cs_amp,
        captions: cs_amp_captions,
    },
    Family {
        name: "diff_pair",
        label: "differential_pair",
        slots: &[
            Slot { name: "rd", choices: &["5k", "10k", "20k", "40k", "80k"] },
            Slot { name: "w", choices: &["2u", "4u", "8u", "16u"] },
            Slot { name: "itail", choices: &["10u", "20u", "50u", "100u", "200u"] },
        ],
        render: diff_pair,
        captions: diff_pair_captions,
    },
    Family {
        name: "current_mirror",
        label: "current_mirror",
        slots: &[
            Slot { name: "iref", choices: &["5u", "10u", "20u", "50u", "100u"] },
            Slot { name: "w", choices: &["1u", "2u", "4u", "8u", "16u"] },
            Slot { name: "rl", choices: &["1k", "5k", "10k", "20k"] },
        ],
        render: current_mirror,
        captions: current_mirror_captions,
    },
    Family {
        name: "miller_opamp",
        label: "two_stage_opamp",
        slots: &[
            Slot { name: "cc", choices: &["0.5p", "1p", "2p", "3p", "5p"] },
            Slot { name: "w2", choices: &["10u", "20u", "40u", "80u"] },
            Slot { name: "itail", choices: &["10u", "20u", "50u", "100u"] },
        ],
        render: miller_opamp,
        captions: miller_opamp_captions,
    },
    Family {
        name: "rc_lowpass",
        label: "rc_lowpass_filter",
        slots: &[
            Slot { name: "r", choices: &["1k", "2.2k", "4.7k", "10k", "22k"] },
            Slot { name: "c", choices: &["1n", "2.2n", "4.7n", "10n", "22n"] },
            Slot { name: "rl", choices: &["100k", "220k", "470k", "1meg"] },
        ],
        render: rc_lowpass,
        captions: rc_lowpass_captions,
    },
    Family {
        name: "wien_bridge",
        label: "wien_bridge_network",
        slots: &[
            Slot { name: "r", choices: &["1k", "2k", "5k", "10k", "20k"] },
            Slot { name: "c", choices: &["1n", "2n", "5n", "10n", "20n"] },
            Slot { name: "rf", choices: &["20k", "22k", "47k", "100k"] },
        ],
        render: wien_bridge,
        captions: wien_bridge_captions,
    },
    Family {
        name: "ring_osc",
        label: "ring_oscillator",
        slots: &[
            Slot { name: "stages", choices: &["3", "5", "7"] },
            Slot { name: "w", choices: &["1u", "2u", "4u", "8u"] },
            Slot { name: "cl", choices: &["10f", "20f", "50f", "100f"] },
        ],
        render: ring_osc,
        captions: ring_osc_captions,
    },
    Family {
        name: "divider",
        label: "resistive_divider",
        slots: &[
            Slot { name: "r1", choices: &["1k", "2k", "5k", "10k", "20k", "50k"] },
            Slot { name: "r2", choices: &["1k", "2k", "5k", "10k", "20k", "50k"] },
            Slot { name: "vin", choices: &["1.2", "1.8", "3.3", "5"] },
        ],
        render: divider,
        captions: divider_captions,
    },
];

pub fn family(name: &str) -> Option<&'static Family> {
    FAMILIES.iter().find(|f| f.name == name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub per_family: usize,
    /// Family names; empty means all.
    pub families: Vec<String>,
    pub seed: u64,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    /// Weight of each value glyph relative to the unit family anchor.
    pub glyph_scale: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            per_family: 40,
            families: Vec::new(),
            seed: 0,
            feature_dim: 512,
            noise_sigma: 0.05,
            glyph_scale: 0.5,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub family: &'static str,
    pub label: usize,
    pub values: Vec<&'static str>,
    pub netlist: String,
    pub caption: String,
    pub features: Vec<f64>,
    pub split: Split,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("unknown family `{0}`")]
    UnknownFamily(String),
    #[error("family `{family}` has {available} distinct value tuples, {requested} requested")]
    TooManySamples { family: String, requested: usize, available: usize },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Generates samples in memory. Deterministic in `config`.
pub fn generate_samples(config: &SynthConfig) -> Result<Vec<SynthSample>, SynthError> {
    let families: Vec<&Family> = if config.families.is_empty() {
        FAMILIES.iter().collect()
    } else {
        config.families.iter().map(|n| family(n).ok_or_else(|| SynthError::UnknownFamily(n.clone()))).collect::<Result<_, _>>()?
    };
    for f in &families {
        if config.per_family > f.capacity() {
            return Err(SynthError::TooManySamples {
                family: f.name.into(),
                requested: config.per_family,
                available: f.capacity(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.feature_dim;
    let n_test = (config.per_family as f64 * config.test_fraction).round() as usize;
    let mut out = Vec::with_capacity(families.len() * config.per_family);
    for f in families {
        let anchor = unit_vector(&mut rng, dim);
        let glyphs: Vec<Vec<Vec<f64>>> =
            f.slots.iter().map(|s| s.choices.iter().map(|_| unit_vector(&mut rng, dim)).collect()).collect();

        // distinct value tuples, drawn without replacement
        let mut tuples: Vec<usize> = (0..f.capacity()).collect();
        let (picked, _) = tuples.partial_shuffle(&mut rng, config.per_family);
        for (i, &t) in picked.iter().enumerate() {
            let mut rest = t;
            let mut choice = Vec::with_capacity(f.slots.len());
            for s in f.slots {
                choice.push(rest % s.choices.len());
                rest /= s.choices.len();
            }
            let values: Vec<&'static str> = f.slots.iter().zip(&choice).map(|(s, &c)| s.choices[c]).collect();
            let caption = (f.captions)(&values)[rng.random_range(0..3)].clone();

            let mut feat = anchor.clone();
            for (slot, &c) in choice.iter().enumerate() {
                for (x, g) in feat.iter_mut().zip(&glyphs[slot][c]) {
                    *x += config.glyph_scale * g;
                }
            }
            for x in feat.iter_mut() {
                *x += config.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
            let n = feat.iter().map(|x| x * x).sum::<f64>().sqrt();
            // stored as f32 on disk; keep the in-memory copy identical
            feat.iter_mut().for_each(|x| *x = (*x / n) as f32 as f64);

            out.push(SynthSample {
                id: format!("{}_{i:04}", f.name),
                family: f.name,
                label: f.label_index(),
                netlist: f.netlist(&values),
                values,
                caption,
                features: feat,
                split: if i < config.per_family - n_test { Split::Train } else { Split::Test },
            });
        }
    }
    Ok(out)
}

/// Writes netlists, feature files and `manifest.jsonl` under `dir`.
pub fn write_corpus(samples: &[SynthSample], dir: &Path, feature_dim: usize) -> Result<Manifest, SynthError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ManifestError::Io { path, source }
    };
    let netlists = dir.join("netlists");
    let features = dir.join("features");
    fs::create_dir_all(&netlists).map_err(io(&netlists))?;
    fs::create_dir_all(&features).map_err(io(&features))?;
    let mut m = Manifest { feature_dim, base_dir: dir.to_path_buf(), ..Manifest::default() };
    for s in samples {
        let np = format!("netlists/{}.sp", s.id);
        let fp = format!("features/{}.f32", s.id);
        fs::write(dir.join(&np), &s.netlist).map_err(io(&dir.join(&np)))?;
        write_feature_file(&dir.join(&fp), &s.features)?;
        m.records.push(TripletRecord {
            id: s.id.clone(),
            netlist_path: np,
            caption: s.caption.clone(),
            image_feature_path: fp,
            cluster_id: None,
            label: Some(s.label),
            split: s.split,
        });
    }
    save_manifest(&m, &dir.join("manifest.jsonl"))?;
    Ok(m)
}

pub fn generate_synthetic_corpus(config: &SynthConfig, dir: &Path) -> Result<Manifest, SynthError> {
    let samples = generate_samples(config)?;
    write_corpus(&samples, dir, config.feature_dim)
}
