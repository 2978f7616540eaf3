/// Topology vocabulary for the auxiliary classifier.
pub const LABELS: [&str; NUM_LABELS] = [
    "common_source_amplifier",
    "common_gate_amplifier",
    "source_follower",
    "differential_pair",
    "current_mirror",
    "cascode_current_mirror",
    "two_stage_opamp",
    "folded_cascode_ota",
    "bandgap_reference",
    "vco",
    "ring_oscillator",
    "comparator",
    "ldo_regulator",
    "rc_lowpass_filter",
    "rc_highpass_filter",
    "active_filter",
    "wien_bridge_network",
    "resistive_divider",
    "passive_network",
];

pub const NUM_LABELS: usize = 19;

pub fn label_index(name: &str) -> Option<usize> {
    LABELS.iter().position(|l| *l == name)
}
