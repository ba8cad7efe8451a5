use std::path::Path;
use std::process::Command;

use super::color::{rgb_to_yuv420, yuv420_to_rgb, Yuv420};
use super::proxy::code_plane;
use super::qpmap::QpMap;
use crate::error::{Error, Result};
use crate::imaging::{load_rgb, save_rgb, RgbImage};

#[derive(Debug, Clone, PartialEq)]
pub struct CodedImage {
    pub bits: u64,
    pub recon: RgbImage,
}

/// Anything that can code an RGB image under a per-CTU QP map.
pub trait CodecAdapter: Send + Sync {
    fn name(&self) -> String;
    fn encode(&self, image: &RgbImage, map: &QpMap) -> Result<CodedImage>;
}

fn check_dims(image: &RgbImage, map: &QpMap) -> Result<()> {
    if image.width() as usize != map.image_w || image.height() as usize != map.image_h {
        return Err(Error::contract(format!(
            "image {}x{} does not match QP map {}x{}",
            image.width(),
            image.height(),
            map.image_w,
            map.image_h
        )));
    }
    Ok(())
}

/// The built-in block-DCT codec on YUV 4:2:0. Chroma planes use the same
/// QPs on a half-size CTU grid.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProxyCodec;

impl CodecAdapter for ProxyCodec {
    fn name(&self) -> String {
        "proxy".into()
    }

    fn encode(&self, image: &RgbImage, map: &QpMap) -> Result<CodedImage> {
        check_dims(image, map)?;
        let yuv = rgb_to_yuv420(image);
        let (w, h) = (map.image_w, map.image_h);
        let luma = code_plane(&yuv.y, map.ctu, map.rows, map.cols, &map.qps, w, h)?;
        let half = map.ctu / 2;
        let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
        let u = code_plane(&yuv.u, half, map.rows, map.cols, &map.qps, cw, ch)?;
        let v = code_plane(&yuv.v, half, map.rows, map.cols, &map.qps, cw, ch)?;
        let recon = yuv420_to_rgb(&Yuv420 {
            y: luma.recon,
            u: u.recon,
            v: v.recon,
            width: yuv.width,
            height: yuv.height,
        })?;
        Ok(CodedImage {
            bits: luma.bits + u.bits + v.bits,
            recon,
        })
    }
}

/// Runs an external encoder through `sh -c`.
///
/// The template must mention `{input}` (PNG to code), `{qpmap}` (sidecar)
/// and `{output}` (bitstream). Optional placeholders: `{recon}`, where the
/// tool writes the decoded image (otherwise `{output}` itself is decoded as an
/// image), and `{bits}`, a file holding the decimal bit count (otherwise the
/// bit count is eight times the size of `{output}`).
#[derive(Debug, Clone)]
pub struct ExternalCodec {
    template: String,
}

impl ExternalCodec {
    pub fn new(template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        if template.trim().is_empty() {
            return Err(Error::Config("empty external encoder command".into()));
        }
        Ok(Self { template })
    }

    fn quote(p: &Path) -> String {
        format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
    }
}

impl CodecAdapter for ExternalCodec {
    fn name(&self) -> String {
        format!("external: {}", self.template)
    }

    fn encode(&self, image: &RgbImage, map: &QpMap) -> Result<CodedImage> {
        check_dims(image, map)?;
        let dir =
            tempfile::tempdir().map_err(|e| Error::Adapter(format!("scratch directory: {e}")))?;
        let input = dir.path().join("input.png");
        let qpmap = dir.path().join("qpmap.txt");
        let output = dir.path().join("output.bin");
        let recon = dir.path().join("recon.png");
        let bits_file = dir.path().join("bits.txt");
        save_rgb(image, &input)?;
        std::fs::write(&qpmap, map.to_sidecar()).map_err(|e| Error::io(&qpmap, e))?;
        let cmd = self
            .template
            .replace("{input}", &Self::quote(&input))
            .replace("{qpmap}", &Self::quote(&qpmap))
            .replace("{output}", &Self::quote(&output))
            .replace("{recon}", &Self::quote(&recon))
            .replace("{bits}", &Self::quote(&bits_file));
        let out = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .output()
            .map_err(|e| Error::Adapter(format!("could not start `sh -c {cmd}`: {e}")))?;
        if !out.status.success() {
            return Err(Error::Adapter(format!(
                "encoder exited with {}: {}{}",
                out.status,
                String::from_utf8_lossy(&out.stderr),
                String::from_utf8_lossy(&out.stdout)
            )));
        }
        let meta = std::fs::metadata(&output).map_err(|_| {
            Error::Adapter(format!(
                "missing output: encoder did not write {}",
                output.display()
            ))
        })?;
        let bits = if self.template.contains("{bits}") {
            let text = std::fs::read_to_string(&bits_file).map_err(|_| {
                Error::Adapter("missing output: encoder did not write the bit count".into())
            })?;
            text.trim().parse().map_err(|_| {
                Error::Adapter(format!("bit count `{}` is not an integer", text.trim()))
            })?
        } else {
            meta.len() * 8
        };
        let recon_path = if self.template.contains("{recon}") {
            &recon
        } else {
            &output
        };
        let decoded =
            load_rgb(recon_path).map_err(|e| Error::Adapter(format!("reconstruction: {e}")))?;
        if decoded.dimensions() != image.dimensions() {
            return Err(Error::Adapter(format!(
                "reconstruction is {:?}, input was {:?}",
                decoded.dimensions(),
                image.dimensions()
            )));
        }
        Ok(CodedImage {
            bits,
            recon: decoded,
        })
    }
}
