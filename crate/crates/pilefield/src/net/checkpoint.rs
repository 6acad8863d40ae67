//! Model checkpoints.
//!
//! Wire format ("NFDM"): magic, version (u32 LE), JSON-header length
//! (u32 LE), JSON architecture descriptor, raw f32 LE weights/biases in
//! declaration order. Round-trips are bit-exact.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::unet::{unet_layers, LayerDesc, UNet};
use super::{Model, PadMode};
use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NFDM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON architecture descriptor stored in the header.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub arch: String,
    pub pad: PadMode,
    pub grid: GridSpec,
    #[serde(default)]
    pub layers: Vec<LayerDesc>,
    #[serde(default)]
    pub dense_widths: Vec<usize>,
    pub param_count: usize,
}

pub fn save_checkpoint(model: &Model, grid: &GridSpec, path: &Path) -> Result<()> {
    let (header, params): (ModelCheckpoint, &[f32]) = match model {
        Model::UNet(net) => (
            ModelCheckpoint {
                arch: "unet".into(),
                pad: net.pad,
                grid: *grid,
                layers: net.layer_descs(),
                dense_widths: Vec::new(),
                param_count: net.params.len(),
            },
            &net.params,
        ),
        Model::Mlp(m) => (
            ModelCheckpoint {
                arch: "mlp".into(),
                pad: PadMode::Zero,
                grid: m.grid,
                layers: Vec::new(),
                dense_widths: m.layer_widths(),
                param_count: m.params.len(),
            },
            &m.params,
        ),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(12 + header_bytes.len() + params.len() * 4);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    for &p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, ModelCheckpoint)> {
    let mut file = std::io::BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| Error::BadFormat("truncated checkpoint".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::BadFormat(format!("bad checkpoint magic {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadFormat(format!("unsupported checkpoint version {version}")));
    }
    file.read_exact(&mut u32buf)?;
    let hlen = u32::from_le_bytes(u32buf) as usize;
    let mut hbytes = vec![0u8; hlen];
    file.read_exact(&mut hbytes)
        .map_err(|_| Error::BadFormat("truncated checkpoint header".into()))?;
    let header: ModelCheckpoint = serde_json::from_slice(&hbytes)?;

    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    if payload.len() != header.param_count * 4 {
        return Err(Error::BadFormat(format!(
            "checkpoint payload {} bytes, expected {}",
            payload.len(),
            header.param_count * 4
        )));
    }
    let params: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let model = match header.arch.as_str() {
        "unet" => {
            let mut net = UNet::<f32>::zeroed(header.pad);
            let expect = unet_layers();
            let stored: Vec<(String, usize, usize)> = header
                .layers
                .iter()
                .map(|l| (format!("{:?}", l.kind), l.c_in, l.c_out))
                .collect();
            let want: Vec<(String, usize, usize)> =
                expect.iter().map(|l| (format!("{:?}", l.kind), l.c_in, l.c_out)).collect();
            if stored != want || net.params.len() != params.len() {
                return Err(Error::BadFormat("checkpoint architecture mismatch for unet".into()));
            }
            net.params = params;
            Model::UNet(net)
        }
        "mlp" => {
            let mut m = Mlp::<f32>::new(header.grid, 0)?;
            if m.layer_widths() != header.dense_widths || m.params.len() != params.len() {
                return Err(Error::BadFormat("checkpoint architecture mismatch for mlp".into()));
            }
            m.params = params;
            Model::Mlp(m)
        }
        other => return Err(Error::BadFormat(format!("unknown architecture '{other}'"))),
    };
    Ok((model, header))
}
