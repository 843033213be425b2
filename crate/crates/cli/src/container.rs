//! Tensor container file: a human-readable text manifest (name, shape, byte
//! offset and length per tensor) followed by raw little-endian `f64`
//! payloads in row-major order. Save/load round trips are bitwise exact.
//!
//! ```text
//! AEWIN-TENSORS v1
//! count 2
//! tensor patch_embed.proj 48x64 0 24576
//! tensor patch_embed.bias 64 24576 512
//! end
//! <binary payload>
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use aewin_core::model::{init_weights, ModelParams, ModelSpec};
use aewin_core::Tensor;
use anyhow::{bail, Context, Result};

const MAGIC: &str = "AEWIN-TENSORS v1";

pub fn write_container(path: &Path, tensors: &[(String, &Tensor)]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "count {}", tensors.len())?;
    let mut offset = 0usize;
    for (name, tensor) in tensors {
        if name.contains(char::is_whitespace) || name.is_empty() {
            bail!("tensor name {name:?} is not manifest-safe");
        }
        let shape = tensor
            .shape()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        let len = tensor.numel() * 8;
        writeln!(out, "tensor {name} {shape} {offset} {len}")?;
        offset += len;
    }
    writeln!(out, "end")?;
    for (_, tensor) in tensors {
        for v in tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = BufReader::new(file);

    // the manifest is line-oriented; read bytes until the end marker so the
    // binary payload position stays exact
    let mut manifest = String::new();
    let mut one = [0u8; 1];
    loop {
        reader.read_exact(&mut one).context("truncated manifest")?;
        manifest.push(one[0] as char);
        if manifest.ends_with("\nend\n") || manifest == "end\n" {
            break;
        }
        if manifest.len() > 1 << 22 {
            bail!("manifest unreasonably large");
        }
    }

    let mut lines = manifest.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != MAGIC {
        bail!("not a tensor container (bad magic {magic:?})");
    }
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("count "))
        .context("missing count line")?
        .parse()
        .context("bad count")?;

    struct Entry {
        name: String,
        shape: Vec<usize>,
        offset: usize,
        len: usize,
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next().context("manifest ended early")?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some("tensor") {
            bail!("malformed manifest line {line:?}");
        }
        let name = parts.next().context("missing tensor name")?.to_string();
        let shape: Vec<usize> = parts
            .next()
            .context("missing shape")?
            .split('x')
            .map(|d| d.parse().context("bad shape"))
            .collect::<Result<_>>()?;
        let offset: usize = parts.next().context("missing offset")?.parse()?;
        let len: usize = parts.next().context("missing length")?.parse()?;
        let numel: usize = shape.iter().product();
        if len != numel * 8 {
            bail!("tensor {name}: payload length {len} does not match shape {shape:?}");
        }
        entries.push(Entry {
            name,
            shape,
            offset,
            len,
        });
    }

    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    let mut tensors = Vec::with_capacity(count);
    for e in entries {
        if e.offset + e.len > payload.len() {
            bail!("tensor {} extends past the payload", e.name);
        }
        let mut data = Vec::with_capacity(e.len / 8);
        for chunk in payload[e.offset..e.offset + e.len].chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        let tensor = Tensor::new(&e.shape, data)
            .map_err(|err| anyhow::anyhow!("tensor {}: {err}", e.name))?;
        tensors.push((e.name, tensor));
    }
    Ok(tensors)
}

/// Writes every model parameter under its canonical name.
pub fn save_model(path: &Path, params: &ModelParams) -> Result<()> {
    let named = params.named();
    write_container(path, &named)
}

/// Loads weights for `spec`, verifying that the container holds exactly the
/// expected tensors with the expected shapes. Mismatches name the tensor.
pub fn load_model(path: &Path, spec: &ModelSpec) -> Result<ModelParams> {
    let mut params = init_weights(spec, 0).map_err(|e| anyhow::anyhow!("{e}"))?;
    let loaded = read_container(path)?;
    let mut slots = params.named_mut();
    if loaded.len() != slots.len() {
        bail!(
            "container holds {} tensors but spec {} expects {}",
            loaded.len(),
            spec.name,
            slots.len()
        );
    }
    for ((want_name, slot), (got_name, tensor)) in slots.iter_mut().zip(loaded) {
        if *want_name != got_name {
            bail!("expected tensor {want_name}, found {got_name}");
        }
        if slot.shape() != tensor.shape() {
            bail!(
                "tensor {want_name}: expected shape {:?}, found {:?}",
                slot.shape(),
                tensor.shape()
            );
        }
        **slot = tensor;
    }
    Ok(params)
}

/// Writes an image tensor (`[H,W,3]` RGB or `[H,W]` grayscale) as a
/// single-tensor container named `image`.
pub fn save_image(path: &Path, image: &Tensor) -> Result<()> {
    write_container(path, &[("image".to_string(), image)])
}

/// Reads an image container, expanding grayscale to three channels.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let tensors = read_container(path)?;
    let (name, image) = tensors
        .into_iter()
        .next()
        .context("image container is empty")?;
    if name != "image" {
        bail!("expected a tensor named image, found {name}");
    }
    match image.shape() {
        [_, _, 3] => Ok(image),
        [h, w] => {
            let (h, w) = (*h, *w);
            Ok(Tensor::from_fn(&[h, w, 3], |i| image.data()[i / 3]))
        }
        other => bail!("image must be [H,W,3] or [H,W], got {other:?}"),
    }
}
