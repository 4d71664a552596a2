//! Model checkpoints: a fixed little-endian container holding the model
//! kind, its structural description (spec text or layer dims) and every
//! parameter tensor in declaration order.

use crate::arch::{build_network, emit_spec, parse_spec, Network};
use crate::error::{Error, Result};
use crate::joint::{build_joint, JointNetwork, JointSpec};
use crate::lstmp::LstmpStack;
use crate::tensor::Tensor;
use crate::train::Scorer;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"ACMCKPT1";
pub const VERSION: u32 = 1;

const KIND_PLAIN: u8 = 0;
const KIND_JOINT: u8 = 1;
const KIND_LSTMP: u8 = 2;

/// A loaded acoustic model of any family.
pub enum Checkpoint {
    Plain(Network),
    Joint(JointNetwork),
    Lstmp {
        stack: LstmpStack,
        output_delay: usize,
    },
}

impl Checkpoint {
    pub fn n_states(&self) -> usize {
        match self {
            Checkpoint::Plain(n) => n.n_states(),
            Checkpoint::Joint(n) => n.n_states(),
            Checkpoint::Lstmp { stack, .. } => stack.n_states,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Checkpoint::Plain(_) => "feedforward",
            Checkpoint::Joint(_) => "joint",
            Checkpoint::Lstmp { .. } => "lstmp",
        }
    }

    pub fn scorer(&self) -> Scorer<'_> {
        match self {
            Checkpoint::Plain(net) => Scorer::Feedforward {
                net,
                context: net.spec.input_shape.1,
            },
            Checkpoint::Joint(net) => Scorer::Joint {
                net,
                context: net.spec.base.input_shape.1,
            },
            Checkpoint::Lstmp {
                stack,
                output_delay,
            } => Scorer::Lstmp {
                stack,
                output_delay: *output_delay,
            },
        }
    }
}

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(&(t.len() as u32).to_le_bytes())?;
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_into_tensor<R: Read>(r: &mut R, t: &mut Tensor) -> Result<()> {
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    if n != t.len() {
        return Err(Error::Format(format!(
            "checkpoint tensor has {n} values, model expects {}",
            t.len()
        )));
    }
    let mut b8 = [0u8; 8];
    for v in t.data_mut() {
        r.read_exact(&mut b8)?;
        *v = f64::from_le_bytes(b8);
    }
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let mut buf = vec![0u8; u32::from_le_bytes(b4) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("invalid utf-8 in checkpoint".into()))
}

fn lstmp_header(stack: &LstmpStack, output_delay: usize) -> Vec<u32> {
    let first = &stack.layers[0];
    vec![
        first.input_dim as u32,
        first.cell_dim as u32,
        first.proj_dim as u32,
        stack.layers.len() as u32,
        stack.n_states as u32,
        u32::from(first.peepholes.is_some()),
        output_delay as u32,
    ]
}

fn lstmp_params(stack: &LstmpStack) -> Vec<&Tensor> {
    let mut out = Vec::new();
    for l in &stack.layers {
        out.extend([&l.w_i, &l.w_f, &l.w_g, &l.w_o, &l.b_i, &l.b_f, &l.b_g, &l.b_o, &l.proj]);
        if let Some(p) = &l.peepholes {
            out.extend([&p.p_i, &p.p_f, &p.p_o]);
        }
    }
    out.push(&stack.out_weight);
    out.push(&stack.out_bias);
    out
}

fn lstmp_params_mut(stack: &mut LstmpStack) -> Vec<&mut Tensor> {
    let mut out = Vec::new();
    for l in &mut stack.layers {
        out.extend([
            &mut l.w_i, &mut l.w_f, &mut l.w_g, &mut l.w_o, &mut l.b_i, &mut l.b_f, &mut l.b_g,
            &mut l.b_o, &mut l.proj,
        ]);
        if let Some(p) = &mut l.peepholes {
            out.extend([&mut p.p_i, &mut p.p_f, &mut p.p_o]);
        }
    }
    out.push(&mut stack.out_weight);
    out.push(&mut stack.out_bias);
    out
}

pub fn save_checkpoint(path: &Path, model: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    match model {
        Checkpoint::Plain(net) => {
            w.write_all(&[KIND_PLAIN])?;
            write_str(&mut w, &emit_spec(&net.spec, None))?;
            let params = net.params();
            w.write_all(&(params.len() as u32).to_le_bytes())?;
            for t in params {
                write_tensor(&mut w, t)?;
            }
        }
        Checkpoint::Joint(net) => {
            w.write_all(&[KIND_JOINT])?;
            write_str(
                &mut w,
                &emit_spec(
                    &net.spec.base,
                    Some((net.spec.aux_dim, net.spec.aux_hidden)),
                ),
            )?;
            let params = net.params();
            w.write_all(&(params.len() as u32).to_le_bytes())?;
            for t in params {
                write_tensor(&mut w, t)?;
            }
        }
        Checkpoint::Lstmp {
            stack,
            output_delay,
        } => {
            w.write_all(&[KIND_LSTMP])?;
            for v in lstmp_header(stack, *output_delay) {
                w.write_all(&v.to_le_bytes())?;
            }
            let params = lstmp_params(stack);
            w.write_all(&(params.len() as u32).to_le_bytes())?;
            for t in params {
                write_tensor(&mut w, t)?;
            }
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != VERSION {
        return Err(Error::Format("unsupported checkpoint version".into()));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;

    let read_count = |r: &mut BufReader<std::fs::File>| -> Result<usize> {
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        Ok(u32::from_le_bytes(b4) as usize)
    };

    match kind[0] {
        KIND_PLAIN => {
            let spec = parse_spec(&read_str(&mut r)?)?;
            let mut net = build_network(&spec.arch, 0)?;
            let count = read_count(&mut r)?;
            let mut params = net.params_mut();
            if count != params.len() {
                return Err(Error::Format(format!(
                    "checkpoint has {count} tensors, model expects {}",
                    params.len()
                )));
            }
            for t in params.iter_mut() {
                read_into_tensor(&mut r, t)?;
            }
            Ok(Checkpoint::Plain(net))
        }
        KIND_JOINT => {
            let parsed = parse_spec(&read_str(&mut r)?)?;
            let (aux_dim, aux_hidden) = parsed
                .aux
                .ok_or_else(|| Error::Format("joint checkpoint lacks aux header".into()))?;
            let mut net = build_joint(&JointSpec::new(parsed.arch, aux_dim, aux_hidden), 0)?;
            let count = read_count(&mut r)?;
            let mut params = net.params_mut();
            if count != params.len() {
                return Err(Error::Format(format!(
                    "checkpoint has {count} tensors, model expects {}",
                    params.len()
                )));
            }
            for t in params.iter_mut() {
                read_into_tensor(&mut r, t)?;
            }
            Ok(Checkpoint::Joint(net))
        }
        KIND_LSTMP => {
            let mut header = [0u32; 7];
            for h in header.iter_mut() {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                *h = u32::from_le_bytes(b);
            }
            let [input_dim, cell_dim, proj_dim, n_layers, n_states, peepholes, delay] = header;
            let mut stack = LstmpStack::new(
                input_dim as usize,
                cell_dim as usize,
                proj_dim as usize,
                n_layers as usize,
                n_states as usize,
                peepholes != 0,
                0,
            )?;
            let count = read_count(&mut r)?;
            let mut params = lstmp_params_mut(&mut stack);
            if count != params.len() {
                return Err(Error::Format(format!(
                    "checkpoint has {count} tensors, model expects {}",
                    params.len()
                )));
            }
            for t in params.iter_mut() {
                read_into_tensor(&mut r, t)?;
            }
            Ok(Checkpoint::Lstmp {
                stack,
                output_delay: delay as usize,
            })
        }
        other => Err(Error::Format(format!("unknown checkpoint kind {other}"))),
    }
}
