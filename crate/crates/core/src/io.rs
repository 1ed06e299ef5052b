//! On-disk formats.
//!
//! * Meshes (`.vtx`): one JSON header line `{magic, version, topology_id, V}`
//!   followed by V x 3 little-endian `f32` positions, row-major.
//! * Topologies (`.faces`): one JSON header line `{magic, version,
//!   topology_id, V, F}` followed by F x 3 little-endian `u32` indices and
//!   then the V x 3 `f32` reference positions.
//! * Images: lossless RGB PNG. Written at 16 bits with
//!   `x = (p - 32767) / 32767`; 8-bit files are read with `x = p / 127.5 - 1`.
//! * Forces: CSV `trajectory_id,frame,fx,fy,fz`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::data::{ForceVec, TactileImage, Topology, TriMesh};
use crate::error::{Error, Result};

pub const MESH_MAGIC: &str = "SPLITSIM-VTX";
pub const FACES_MAGIC: &str = "SPLITSIM-FACES";
pub const FORMAT_VERSION: u32 = 1;

/// Center code of the 16-bit image encoding; maps to exactly 0.0.
const PNG16_CENTER: f32 = 32767.0;

#[derive(Debug, Serialize, Deserialize)]
struct MeshHeader {
    magic: String,
    version: u32,
    topology_id: String,
    #[serde(rename = "V")]
    v: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct FacesHeader {
    magic: String,
    version: u32,
    topology_id: String,
    #[serde(rename = "V")]
    v: usize,
    #[serde(rename = "F")]
    f: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn read_header<T: for<'de> Deserialize<'de>>(path: &Path, r: &mut impl BufRead, magic: &str) -> Result<T> {
    let mut line = Vec::new();
    r.take(4096)
        .read_until(b'\n', &mut line)
        .map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_slice(&line)
        .map_err(|_| Error::format(path, "missing or unreadable header"))?;
    if value.get("magic").and_then(|m| m.as_str()) != Some(magic) {
        return Err(Error::format(path, format!("bad magic (expected {magic})")));
    }
    if value.get("version").and_then(|v| v.as_u64()) != Some(u64::from(FORMAT_VERSION)) {
        return Err(Error::format(path, "unsupported format version"));
    }
    serde_json::from_value(value).map_err(|e| Error::format(path, e.to_string()))
}

fn read_f32s(path: &Path, r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(path, format!("truncated payload (expected {n} floats)")))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn expect_eof(path: &Path, r: &mut impl Read) -> Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::format(path, "trailing bytes after payload")),
        Err(e) => Err(Error::io(path, e)),
    }
}

pub fn save_mesh(path: &Path, mesh: &TriMesh) -> Result<()> {
    let mut w = create(path)?;
    let header = MeshHeader {
        magic: MESH_MAGIC.into(),
        version: FORMAT_VERSION,
        topology_id: mesh.topology.id.clone(),
        v: mesh.n_vertices(),
    };
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for v in mesh.vertices.iter() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Load a mesh and check it against the topology it claims to use.
pub fn load_mesh(path: &Path, topology: &Arc<Topology>) -> Result<TriMesh> {
    let mut r = open(path)?;
    let h: MeshHeader = read_header(path, &mut r, MESH_MAGIC)?;
    if h.topology_id != topology.id || h.v != topology.n_vertices() {
        return Err(Error::Topology {
            expected: format!("{} (V = {})", topology.id, topology.n_vertices()),
            got: format!("{} (V = {})", h.topology_id, h.v),
        });
    }
    let data = read_f32s(path, &mut r, h.v * 3)?;
    expect_eof(path, &mut r)?;
    let vertices = Array2::from_shape_vec((h.v, 3), data).expect("shape");
    TriMesh::new(vertices, Arc::clone(topology))
}

pub fn save_topology(path: &Path, topo: &Topology) -> Result<()> {
    let mut w = create(path)?;
    let header = FacesHeader {
        magic: FACES_MAGIC.into(),
        version: FORMAT_VERSION,
        topology_id: topo.id.clone(),
        v: topo.n_vertices(),
        f: topo.faces.len(),
    };
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for f in &topo.faces {
        for i in f {
            w.write_all(&i.to_le_bytes()).map_err(io)?;
        }
    }
    for v in topo.reference.iter() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_topology(path: &Path) -> Result<Topology> {
    let mut r = open(path)?;
    let h: FacesHeader = read_header(path, &mut r, FACES_MAGIC)?;
    let mut buf = vec![0u8; h.f * 12];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(path, "truncated face list"))?;
    let faces: Vec<[u32; 3]> = buf
        .chunks_exact(12)
        .map(|c| {
            let g = |o: usize| u32::from_le_bytes([c[o], c[o + 1], c[o + 2], c[o + 3]]);
            [g(0), g(4), g(8)]
        })
        .collect();
    let reference = read_f32s(path, &mut r, h.v * 3)?;
    expect_eof(path, &mut r)?;
    Topology::new(
        h.topology_id,
        faces,
        Array2::from_shape_vec((h.v, 3), reference).expect("shape"),
    )
}

/// Snap a pixel value to the 16-bit storage lattice.
pub fn quantize_pixel(x: f32) -> f32 {
    (encode16(x) as f32 - PNG16_CENTER) / PNG16_CENTER
}

fn encode16(x: f32) -> u16 {
    (f64::from(x.clamp(-1.0, 1.0)) * f64::from(PNG16_CENTER) + f64::from(PNG16_CENTER)).round() as u16
}

/// Quantize every pixel to the storage lattice (what a save/load round trip yields).
pub fn quantize_image(img: &TactileImage) -> TactileImage {
    TactileImage {
        pixels: img.pixels.mapv(quantize_pixel),
        sensor_id: img.sensor_id.clone(),
    }
}

pub fn save_image(path: &Path, img: &TactileImage) -> Result<()> {
    if let Some(v) = img.pixels.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("pixel value {v} outside [-1, 1]")));
    }
    let (h, w) = img.shape();
    let mut data = Vec::with_capacity(h * w * 6);
    for v in img.pixels.iter() {
        data.extend_from_slice(&encode16(*v).to_be_bytes());
    }
    let writer = create(path)?;
    let mut enc = png::Encoder::new(writer, w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Sixteen);
    let fmt = |e: png::EncodingError| Error::format(path, e.to_string());
    let mut wr = enc.write_header().map_err(fmt)?;
    wr.write_image_data(&data).map_err(fmt)?;
    wr.finish().map_err(fmt)
}

pub fn load_image(path: &Path) -> Result<TactileImage> {
    let fmt = |e: png::DecodingError| Error::format(path, e.to_string());
    let dec = png::Decoder::new(open(path)?);
    let mut reader = dec.read_info().map_err(fmt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    if info.color_type != png::ColorType::Rgb {
        return Err(Error::format(path, format!("expected RGB, got {:?}", info.color_type)));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let values: Vec<f32> = match info.bit_depth {
        png::BitDepth::Eight => buf[..h * w * 3]
            .iter()
            .map(|&p| (f64::from(p) / 127.5 - 1.0) as f32)
            .collect(),
        png::BitDepth::Sixteen => buf[..h * w * 6]
            .chunks_exact(2)
            .map(|c| {
                let p = u16::from_be_bytes([c[0], c[1]]).min(65534);
                (p as f32 - PNG16_CENTER) / PNG16_CENTER
            })
            .collect(),
        d => return Err(Error::format(path, format!("unsupported bit depth {d:?}"))),
    };
    TactileImage::new(Array3::from_shape_vec((h, w, 3), values).expect("shape"))
}

/// One row of `forces.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceRow {
    pub trajectory_id: String,
    pub frame: usize,
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
}

impl ForceRow {
    pub fn force(&self) -> ForceVec {
        ForceVec::new(self.fx, self.fy, self.fz)
    }
}

pub fn write_forces(path: &Path, rows: &[ForceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_forces(path: &Path) -> Result<Vec<ForceRow>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["trajectory_id", "frame", "fx", "fy", "fz"] {
        return Err(Error::format(path, "forces.csv header must be trajectory_id,frame,fx,fy,fz"));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
