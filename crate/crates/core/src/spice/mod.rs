//! SPICE netlist parsing into [`NetlistIR`].
//!
//! Ngspice-flavoured syntax: `*` comment lines, `;` / ` $ ` inline comments,
//! `+` continuations, `.model`, `.subckt`/`.ends`, `.param`, `.control`
//! blocks and analysis cards. Everything is case-insensitive and identifiers
//! are lower-cased; net `gnd` is an alias of ground `0`.

mod lexer;
mod parser;
mod value;
mod writer;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use parser::parse_netlist;
pub use value::parse_value;

/// Canonical ground net name.
pub const GROUND: &str = "0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Nmos,
    Pmos,
    Npn,
    Pnp,
    Diode,
    Resistor,
    Capacitor,
    Inductor,
    Vsource,
    Isource,
    /// `E` card.
    Vcvs,
    /// `F` card.
    Cccs,
    /// `G` card.
    Vccs,
    /// `H` card.
    Ccvs,
    /// `X` card.
    Subckt,
}

impl DeviceKind {
    pub const ALL: [DeviceKind; 15] = [
        DeviceKind::Nmos,
        DeviceKind::Pmos,
        DeviceKind::Npn,
        DeviceKind::Pnp,
        DeviceKind::Diode,
        DeviceKind::Resistor,
        DeviceKind::Capacitor,
        DeviceKind::Inductor,
        DeviceKind::Vsource,
        DeviceKind::Isource,
        DeviceKind::Vcvs,
        DeviceKind::Cccs,
        DeviceKind::Vccs,
        DeviceKind::Ccvs,
        DeviceKind::Subckt,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Fixed port names, or `None` for subcircuit instances whose ports come
    /// from the definition.
    pub fn port_names(self) -> Option<&'static [&'static str]> {
        use DeviceKind::*;
        Some(match self {
            Nmos | Pmos => &["d", "g", "s", "b"],
            Npn | Pnp => &["c", "b", "e"],
            Diode => &["a", "k"],
            Resistor | Capacitor | Inductor => &["t1", "t2"],
            Vsource | Isource => &["p", "n"],
            Vcvs | Vccs => &["np", "nn", "ncp", "ncn"],
            Cccs | Ccvs => &["np", "nn"],
            Subckt => return None,
        })
    }

    /// Card letter used when writing the device back out.
    pub fn prefix(self) -> char {
        use DeviceKind::*;
        match self {
            Nmos | Pmos => 'm',
            Npn | Pnp => 'q',
            Diode => 'd',
            Resistor => 'r',
            Capacitor => 'c',
            Inductor => 'l',
            Vsource => 'v',
            Isource => 'i',
            Vcvs => 'e',
            Cccs => 'f',
            Vccs => 'g',
            Ccvs => 'h',
            Subckt => 'x',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terminal {
    pub port: String,
    pub net: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub name: String,
    pub kind: DeviceKind,
    pub terminals: Vec<Terminal>,
    /// Parameter values in SI units. Positional values of R/C/L/V/I/E/F/G/H
    /// cards are stored under `value`.
    pub params: BTreeMap<String, f64>,
    /// Model name (M/Q/D and model-based R/C/L) or subcircuit name (X).
    pub model_ref: Option<String>,
    /// Controlling voltage source of an F/H card.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<String>,
}

impl Device {
    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    /// Device family as written on the `.model` card (`nmos`, `npn`, `d`, ...).
    pub family: String,
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubcktDef {
    pub ports: Vec<String>,
    pub body: NetlistIR,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NetlistIR {
    pub title: String,
    pub devices: Vec<Device>,
    pub nets: BTreeSet<String>,
    pub models: BTreeMap<String, Model>,
    pub subckts: BTreeMap<String, SubcktDef>,
    /// Analysis and unknown dot-cards, kept verbatim (lower-cased).
    #[serde(skip)]
    pub directives: Vec<String>,
}

/// A model or subcircuit reference that does not resolve in its scope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnresolvedRef {
    pub device: String,
    pub reference: String,
}

impl NetlistIR {
    /// Devices whose `model_ref` names neither a model nor a subcircuit
    /// visible from this scope.
    pub fn unresolved_refs(&self) -> Vec<UnresolvedRef> {
        let mut out = Vec::new();
        self.collect_unresolved(&[], &mut out);
        out
    }

    fn collect_unresolved<'a>(&'a self, parents: &[&'a NetlistIR], out: &mut Vec<UnresolvedRef>) {
        let mut chain: Vec<&NetlistIR> = vec![self];
        chain.extend_from_slice(parents);
        for d in &self.devices {
            let Some(r) = &d.model_ref else { continue };
            let found = if d.kind == DeviceKind::Subckt {
                chain.iter().any(|s| s.subckts.contains_key(r))
            } else {
                chain.iter().any(|s| s.models.contains_key(r))
            };
            if !found {
                out.push(UnresolvedRef { device: d.name.clone(), reference: r.clone() });
            }
        }
        for def in self.subckts.values() {
            def.body.collect_unresolved(&chain, out);
        }
    }

    /// Serializes back to SPICE text that parses to an equal IR.
    pub fn to_spice(&self) -> String {
        writer::write_netlist(self)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("line {line}: lex error: {message}")]
    Lex { line: usize, message: String },
    #[error("line {line}: device `{device}` needs {expected} terminals, found {found}")]
    TooFewTerminals { line: usize, device: String, expected: usize, found: usize },
    #[error("line {line}: unknown card prefix in `{card}`")]
    UnknownCardPrefix { line: usize, card: String },
    #[error("line {line}: .subckt `{name}` is never closed by .ends")]
    UnterminatedSubckt { line: usize, name: String },
    #[error("line {line}: duplicate device name `{name}`")]
    DuplicateDeviceName { line: usize, name: String },
    #[error("line {line}: bad number `{token}`")]
    BadNumber { line: usize, token: String },
    #[error("line {line}: .ends without an open .subckt")]
    UnexpectedEnds { line: usize },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::Lex { line, .. }
            | ParseError::TooFewTerminals { line, .. }
            | ParseError::UnknownCardPrefix { line, .. }
            | ParseError::UnterminatedSubckt { line, .. }
            | ParseError::DuplicateDeviceName { line, .. }
            | ParseError::BadNumber { line, .. }
            | ParseError::UnexpectedEnds { line } => *line,
        }
    }

}
