//! Plain-text architecture spec format. One layer per line, headers first:
//!
//! ```text
//! name vd6
//! family vdcnn
//! input 1x11x40
//! states 16
//! aux 540 hidden 512        (joint networks only)
//! conv 64 3x3 pad 0x0
//! relu
//! pool 1x2
//! flatten
//! concat-aux                (joint networks only)
//! fc 2048
//! ...
//! ```
//!
//! Emission is canonical, so emit -> parse -> emit is the identity.

use super::{ActKind, ArchitectureSpec, LayerSpec, NetFamily};
use crate::error::{Error, Result};

/// A parsed spec file: the architecture plus, for joint networks, the
/// auxiliary stream's (input dim, hidden width).
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSpec {
    pub arch: ArchitectureSpec,
    pub aux: Option<(usize, usize)>,
}

pub fn emit_spec(spec: &ArchitectureSpec, aux: Option<(usize, usize)>) -> String {
    let mut out = String::new();
    out.push_str(&format!("name {}\n", spec.name));
    out.push_str(&format!(
        "family {}\n",
        match spec.family {
            NetFamily::Vdcnn => "vdcnn",
            NetFamily::Baseline => "baseline",
        }
    ));
    let (m, t, f) = spec.input_shape;
    out.push_str(&format!("input {m}x{t}x{f}\n"));
    out.push_str(&format!("states {}\n", spec.n_states));
    if let Some((dim, hidden)) = aux {
        out.push_str(&format!("aux {dim} hidden {hidden}\n"));
    }
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv {
                out_maps,
                kt,
                kf,
                pad_t,
                pad_f,
            } => out.push_str(&format!("conv {out_maps} {kt}x{kf} pad {pad_t}x{pad_f}\n")),
            LayerSpec::Pool {
                pt,
                pf,
                truncate,
                stride,
            } => {
                out.push_str(&format!("pool {pt}x{pf}"));
                if let Some((st, sf)) = stride {
                    out.push_str(&format!(" stride {st}x{sf}"));
                }
                if *truncate {
                    out.push_str(" trunc");
                }
                out.push('\n');
            }
            LayerSpec::Activation(ActKind::Relu) => out.push_str("relu\n"),
            LayerSpec::Activation(ActKind::Sigmoid) => out.push_str("sigmoid\n"),
            LayerSpec::Flatten => out.push_str("flatten\n"),
            LayerSpec::Fc { out_dim } => out.push_str(&format!("fc {out_dim}\n")),
            LayerSpec::ConcatAux => out.push_str("concat-aux\n"),
        }
    }
    out
}

fn parse_pair(s: &str, line: usize, what: &str) -> Result<(usize, usize)> {
    let mut it = s.split('x');
    let bad = || Error::Parse {
        line,
        detail: format!("expected {what} as AxB, got '{s}'"),
    };
    let a = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let b = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    if it.next().is_some() {
        return Err(bad());
    }
    Ok((a, b))
}

fn parse_usize(s: &str, line: usize, what: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Parse {
        line,
        detail: format!("expected {what}, got '{s}'"),
    })
}

pub fn parse_spec(text: &str) -> Result<ParsedSpec> {
    let mut name = None;
    let mut family = NetFamily::Vdcnn;
    let mut input = None;
    let mut states = None;
    let mut aux = None;
    let mut layers = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = line.split_whitespace();
        let head = tok.next().unwrap();
        let rest: Vec<&str> = tok.collect();
        let arity_err = |want: &str| Error::Parse {
            line: line_no,
            detail: format!("'{head}' expects {want}"),
        };
        match head {
            "name" => {
                if rest.len() != 1 {
                    return Err(arity_err("a single identifier"));
                }
                name = Some(rest[0].to_string());
            }
            "family" => match rest.as_slice() {
                ["vdcnn"] => family = NetFamily::Vdcnn,
                ["baseline"] => family = NetFamily::Baseline,
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        detail: "family must be 'vdcnn' or 'baseline'".into(),
                    })
                }
            },
            "input" => {
                if rest.len() != 1 {
                    return Err(arity_err("MxTxF"));
                }
                let parts: Vec<&str> = rest[0].split('x').collect();
                if parts.len() != 3 {
                    return Err(arity_err("MxTxF"));
                }
                input = Some((
                    parse_usize(parts[0], line_no, "maps")?,
                    parse_usize(parts[1], line_no, "T")?,
                    parse_usize(parts[2], line_no, "F")?,
                ));
            }
            "states" => {
                if rest.len() != 1 {
                    return Err(arity_err("a count"));
                }
                states = Some(parse_usize(rest[0], line_no, "state count")?);
            }
            "aux" => {
                if rest.len() != 3 || rest[1] != "hidden" {
                    return Err(arity_err("'<dim> hidden <width>'"));
                }
                aux = Some((
                    parse_usize(rest[0], line_no, "aux dim")?,
                    parse_usize(rest[2], line_no, "aux hidden width")?,
                ));
            }
            "conv" => {
                if rest.len() != 4 || rest[2] != "pad" {
                    return Err(arity_err("'<maps> KTxKF pad PTxPF'"));
                }
                let out_maps = parse_usize(rest[0], line_no, "output maps")?;
                let (kt, kf) = parse_pair(rest[1], line_no, "filter size")?;
                let (pad_t, pad_f) = parse_pair(rest[3], line_no, "padding")?;
                layers.push(LayerSpec::Conv {
                    out_maps,
                    kt,
                    kf,
                    pad_t,
                    pad_f,
                });
            }
            "pool" => {
                if rest.is_empty() {
                    return Err(arity_err("'PTxPF [stride STxSF] [trunc]'"));
                }
                let (pt, pf) = parse_pair(rest[0], line_no, "pool size")?;
                let mut stride = None;
                let mut truncate = false;
                let mut i = 1;
                while i < rest.len() {
                    match rest[i] {
                        "stride" => {
                            let s = rest.get(i + 1).ok_or_else(|| Error::Parse {
                                line: line_no,
                                detail: "stride requires STxSF".into(),
                            })?;
                            stride = Some(parse_pair(s, line_no, "stride")?);
                            i += 2;
                        }
                        "trunc" => {
                            truncate = true;
                            i += 1;
                        }
                        other => {
                            return Err(Error::Parse {
                                line: line_no,
                                detail: format!("unexpected token '{other}' after pool"),
                            })
                        }
                    }
                }
                layers.push(LayerSpec::Pool {
                    pt,
                    pf,
                    truncate,
                    stride,
                });
            }
            "relu" => layers.push(LayerSpec::Activation(ActKind::Relu)),
            "sigmoid" => layers.push(LayerSpec::Activation(ActKind::Sigmoid)),
            "flatten" => layers.push(LayerSpec::Flatten),
            "concat-aux" => layers.push(LayerSpec::ConcatAux),
            "fc" => {
                if rest.len() != 1 {
                    return Err(arity_err("a width"));
                }
                layers.push(LayerSpec::Fc {
                    out_dim: parse_usize(rest[0], line_no, "width")?,
                });
            }
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    detail: format!("unknown directive '{other}'"),
                })
            }
        }
    }

    let missing = |what: &str| Error::Parse {
        line: 0,
        detail: format!("missing '{what}' header"),
    };
    Ok(ParsedSpec {
        arch: ArchitectureSpec {
            name: name.ok_or_else(|| missing("name"))?,
            input_shape: input.ok_or_else(|| missing("input"))?,
            layers,
            n_states: states.ok_or_else(|| missing("states"))?,
            family,
        },
        aux,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::catalog;

    #[test]
    fn catalog_round_trips_losslessly() {
        for spec in catalog(16) {
            let text = emit_spec(&spec, None);
            let parsed = parse_spec(&text).unwrap();
            assert_eq!(parsed.arch, spec, "round trip failed for {}", spec.name);
            assert_eq!(emit_spec(&parsed.arch, parsed.aux), text);
        }
    }

    #[test]
    fn aux_header_round_trips() {
        let spec = catalog(8).remove(2);
        let text = emit_spec(&spec, Some((540, 512)));
        let parsed = parse_spec(&text).unwrap();
        assert_eq!(parsed.aux, Some((540, 512)));
        assert_eq!(emit_spec(&parsed.arch, parsed.aux), text);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let text = "name x\ninput 1x11x40\nstates 4\nconv 64 3x3\n";
        match parse_spec(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_accepts_comments_and_blanks() {
        let text = "# a comment\nname x\n\ninput 1x3x4\nstates 2\nflatten\nfc 2\n";
        let parsed = parse_spec(text).unwrap();
        assert_eq!(parsed.arch.layers.len(), 2);
    }

    #[test]
    fn overlapping_stride_survives_round_trip() {
        let text = "name x\ninput 1x4x4\nstates 2\npool 2x2 stride 1x1\nflatten\nfc 2\n";
        let parsed = parse_spec(text).unwrap();
        match &parsed.arch.layers[0] {
            LayerSpec::Pool { stride, .. } => assert_eq!(*stride, Some((1, 1))),
            other => panic!("unexpected layer {other:?}"),
        }
        assert!(emit_spec(&parsed.arch, None).contains("pool 2x2 stride 1x1"));
    }
}
