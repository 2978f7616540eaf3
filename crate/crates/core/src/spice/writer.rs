use std::fmt::Write;

use super::{Device, DeviceKind, NetlistIR};

pub(crate) fn write_netlist(ir: &NetlistIR) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "* {}", ir.title);
    write_body(ir, &mut out);
    out.push_str(".end\n");
    out
}

fn num(x: f64) -> String {
    // `{:e}` is the shortest round-tripping form and `parse_value` reads it
    format!("{x:e}")
}

fn write_body(ir: &NetlistIR, out: &mut String) {
    for (name, m) in &ir.models {
        let _ = write!(out, ".model {name} {}", m.family);
        for (k, v) in &m.params {
            let _ = write!(out, " {k}={}", num(*v));
        }
        out.push('\n');
    }
    for (name, def) in &ir.subckts {
        let _ = writeln!(out, ".subckt {name} {}", def.ports.join(" "));
        write_body(&def.body, out);
        let _ = writeln!(out, ".ends {name}");
    }
    for d in &ir.devices {
        write_device(d, out);
    }
    for dir in &ir.directives {
        out.push_str(dir);
        out.push('\n');
    }
}

fn write_device(d: &Device, out: &mut String) {
    out.push_str(&d.name);
    for t in &d.terminals {
        out.push(' ');
        out.push_str(&t.net);
    }
    if let Some(c) = &d.control {
        let _ = write!(out, " {c}");
    }
    if let Some(m) = &d.model_ref {
        let _ = write!(out, " {m}");
    }
    let positional_value = !matches!(d.kind, DeviceKind::Nmos | DeviceKind::Pmos | DeviceKind::Npn | DeviceKind::Pnp | DeviceKind::Diode | DeviceKind::Subckt);
    let sources = matches!(d.kind, DeviceKind::Vsource | DeviceKind::Isource);
    for (k, v) in &d.params {
        match k.as_str() {
            "value" if sources => {
                let _ = write!(out, " dc {}", num(*v));
            }
            "ac" if sources => {
                let _ = write!(out, " ac {}", num(*v));
            }
            "value" if positional_value => {
                let _ = write!(out, " {}", num(*v));
            }
            _ => {}
        }
    }
    for (k, v) in &d.params {
        let positional = (k == "value" && positional_value) || (k == "ac" && sources);
        if !positional {
            let _ = write!(out, " {k}={}", num(*v));
        }
    }
    out.push('\n');
}
