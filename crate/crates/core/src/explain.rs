//! Saliency maps: Grad-CAM, Grad-CAM++ and occlusion, plus overlay rendering.
//!
//! Gradient methods and occlusion both look at the pre-sigmoid logit.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::data::image::{encode_pgm, quantize, resize, Gray};
use crate::error::{Error, Result};
use crate::net::{LayerCtx, Network};
use crate::tape::Mode;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    GradCam,
    GradCamPp,
    Occlusion,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::GradCam => "gradcam",
            Method::GradCamPp => "gradcampp",
            Method::Occlusion => "occlusion",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradcam" => Ok(Method::GradCam),
            "gradcampp" => Ok(Method::GradCamPp),
            "occlusion" => Ok(Method::Occlusion),
            _ => Err(Error::Usage(format!(
                "unknown method `{s}` (expected gradcam, gradcampp or occlusion)"
            ))),
        }
    }
}

/// An H×W map in [0, 1] whose maximum is 1, or all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub grid: Gray,
    /// Activation the map was computed from (empty for occlusion).
    pub layer: String,
    pub method: Method,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OcclusionSpec {
    /// Side of the square patch, in pixels.
    pub patch: usize,
    pub stride: usize,
    pub fill: f64,
}

impl Default for OcclusionSpec {
    fn default() -> Self {
        OcclusionSpec {
            patch: 16,
            stride: 8,
            fill: 0.0,
        }
    }
}

fn normalize(mut g: Gray) -> Gray {
    let max = g.data.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        g.data.iter_mut().for_each(|v| *v = (*v / max).max(0.0));
    } else {
        g.data.iter_mut().for_each(|v| *v = 0.0);
    }
    g
}

fn image_extents(net: &Network, image: &Tensor) -> Result<(usize, usize)> {
    let c = &net.config;
    if image.shape() != [c.input_channels, c.input_height, c.input_width] {
        return Err(Error::Config(format!(
            "expected an image of shape {}×{}×{}, found {:?}",
            c.input_channels,
            c.input_height,
            c.input_width,
            image.shape()
        )));
    }
    Ok((c.input_height, c.input_width))
}

/// Activation at `layer` and the gradient of the logit with respect to it,
/// both C×h×w, for a single C×H×W image.
pub fn layer_gradients(net: &Network, image: &Tensor, layer: &str) -> Result<(Tensor, Tensor)> {
    image_extents(net, image)?;
    let valid = net.capture_points();
    if !valid.iter().any(|k| k == layer) {
        return Err(Error::Lookup {
            key: layer.to_string(),
            valid,
        });
    }
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    let x = image.reshape(&shape)?.with_grad();
    let mut ctx = LayerCtx::new(&net.params, Mode::Eval, false);
    let xv = ctx.input(x);
    let (logits, _) = net.forward_on(&mut ctx, xv)?;
    let mut rec = ctx.finish();
    let target = rec.tape.sum(logits);
    let grads = rec.tape.backward(target)?;
    let a = rec.captures[layer];
    let act = rec.tape.value(a);
    let g = grads
        .get(a)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(act.shape()));
    let chw = &act.shape()[1..];
    Ok((act.reshape(chw)?, g.reshape(chw)?))
}

fn cam_from_weights(act: &Tensor, weights: &[f64]) -> Gray {
    let (c, h, w) = (act.shape()[0], act.shape()[1], act.shape()[2]);
    let hw = h * w;
    let mut cam = vec![0.0; hw];
    for k in 0..c {
        let a = &act.data()[k * hw..(k + 1) * hw];
        for (o, &v) in cam.iter_mut().zip(a) {
            *o += weights[k] * v;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    Gray {
        height: h,
        width: w,
        data: cam,
    }
}

fn finish(net: &Network, cam: Gray, layer: &str, method: Method) -> SaliencyMap {
    let up = resize(&cam, net.config.input_height, net.config.input_width);
    SaliencyMap {
        grid: normalize(up),
        layer: layer.to_string(),
        method,
    }
}

/// Channel weights are spatial means of ∂logit/∂A_k; map = ReLU(Σ_k w_k A_k).
pub fn grad_cam(net: &Network, image: &Tensor, layer: &str) -> Result<SaliencyMap> {
    let (act, g) = layer_gradients(net, image, layer)?;
    let c = act.shape()[0];
    let hw = act.len() / c;
    let weights: Vec<f64> = g.data().chunks_exact(hw).map(|gk| gk.iter().sum::<f64>() / hw as f64).collect();
    Ok(finish(net, cam_from_weights(&act, &weights), layer, Method::GradCam))
}

/// α_kij = g² / (2g² + Σ_ab A_kab g³) with g = ∂logit/∂A_kij (0 where the
/// denominator vanishes); w_k = Σ_ij α_kij ReLU(g_kij).
pub fn grad_cam_pp(net: &Network, image: &Tensor, layer: &str) -> Result<SaliencyMap> {
    let (act, g) = layer_gradients(net, image, layer)?;
    let c = act.shape()[0];
    let hw = act.len() / c;
    let weights: Vec<f64> = (0..c)
        .map(|k| {
            let a = &act.data()[k * hw..(k + 1) * hw];
            let gk = &g.data()[k * hw..(k + 1) * hw];
            let a_sum: f64 = a.iter().sum();
            gk.iter()
                .map(|&gv| {
                    let g2 = gv * gv;
                    let den = 2.0 * g2 + a_sum * g2 * gv;
                    let alpha = if den != 0.0 { g2 / den } else { 0.0 };
                    alpha * gv.max(0.0)
                })
                .sum()
        })
        .collect();
    Ok(finish(net, cam_from_weights(&act, &weights), layer, Method::GradCamPp))
}

/// Window origins along one axis: every `stride` from 0, plus one flush with the far edge.
fn window_starts(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=len - patch).step_by(stride).collect();
    if *out.last().expect("at least one start") + patch < len {
        out.push(len - patch);
    }
    out
}

/// Slides a `patch`×`patch` window filled with `fill`; each pixel gets the mean
/// logit drop over the windows covering it, floored at zero, then max-normalized.
pub fn occlusion_heatmap(net: &Network, image: &Tensor, spec: &OcclusionSpec) -> Result<SaliencyMap> {
    let (h, w) = image_extents(net, image)?;
    let OcclusionSpec { patch, stride, fill } = *spec;
    if !(1 <= stride && stride <= patch && patch <= h.min(w)) {
        return Err(Error::Config(format!(
            "occlusion needs 1 <= stride ({stride}) <= patch ({patch}) <= {}",
            h.min(w)
        )));
    }
    let c = image.shape()[0];
    let base = net.predict_logits(&[image])?[0];
    let windows: Vec<(usize, usize)> = window_starts(h, patch, stride)
        .into_iter()
        .flat_map(|y| window_starts(w, patch, stride).into_iter().map(move |x| (y, x)))
        .collect();
    let occluded: Vec<Tensor> = windows
        .iter()
        .map(|&(y0, x0)| {
            let mut t = image.clone();
            let d = t.data_mut();
            for ch in 0..c {
                for y in y0..y0 + patch {
                    let row = (ch * h + y) * w;
                    d[row + x0..row + x0 + patch].fill(fill);
                }
            }
            t
        })
        .collect();
    let logits = net.predict_logits(&occluded.iter().collect::<Vec<_>>())?;
    let mut sum = vec![0.0; h * w];
    let mut count = vec![0usize; h * w];
    for (&(y0, x0), &l) in windows.iter().zip(&logits) {
        let drop = base - l;
        for y in y0..y0 + patch {
            for x in x0..x0 + patch {
                sum[y * w + x] += drop;
                count[y * w + x] += 1;
            }
        }
    }
    let data = sum
        .iter()
        .zip(&count)
        .map(|(&s, &n)| if n > 0 { (s / n as f64).max(0.0) } else { 0.0 })
        .collect();
    Ok(SaliencyMap {
        grid: normalize(Gray {
            height: h,
            width: w,
            data,
        }),
        layer: String::new(),
        method: Method::Occlusion,
    })
}

/// Fraction of total saliency inside the mask (0 for an all-zero map).
pub fn localization_score(map: &Gray, mask: &Gray) -> Result<f64> {
    if (map.height, map.width) != (mask.height, mask.width) {
        return Err(Error::dim(
            "localization_score",
            format!("map {}x{} vs mask {}x{}", map.height, map.width, mask.height, mask.width),
        ));
    }
    if !mask.data.iter().any(|&m| m > 0.5) {
        return Err(Error::Input("ground-truth mask is empty".into()));
    }
    let total: f64 = map.data.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let inside: f64 = map.data.iter().zip(&mask.data).filter(|(_, &m)| m > 0.5).map(|(&v, _)| v).sum();
    Ok(inside / total)
}

pub fn saliency_csv(map: &SaliencyMap) -> String {
    let g = &map.grid;
    let mut s = String::from("x,y,value\n");
    for y in 0..g.height {
        for x in 0..g.width {
            let _ = writeln!(s, "{x},{y},{}", g.at(y, x));
        }
    }
    s
}

/// Side-by-side panel: original, heatmap, overlay and (with a mask) the
/// original with the mask outline drawn at full intensity.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub image: Gray,
    pub panels: usize,
}

/// Overlay brightens the image towards white in proportion to saliency:
/// `image + 0.6 · map · (1 − image)`.
pub fn render_overlay(image: &Gray, map: &Gray, mask: Option<&Gray>) -> Result<Panel> {
    let (h, w) = (image.height, image.width);
    let check = |g: &Gray, what: &str| {
        if (g.height, g.width) != (h, w) {
            Err(Error::dim(
                "render_overlay",
                format!("{what} is {}x{}, image is {h}x{w}", g.height, g.width),
            ))
        } else {
            Ok(())
        }
    };
    check(map, "map")?;
    if let Some(m) = mask {
        check(m, "mask")?;
    }
    let overlay: Vec<f64> = image
        .data
        .iter()
        .zip(&map.data)
        .map(|(&i, &m)| (i + 0.6 * m * (1.0 - i)).clamp(0.0, 1.0))
        .collect();
    let mut columns: Vec<&[f64]> = vec![&image.data, &map.data, &overlay];
    let outline: Vec<f64>;
    if let Some(m) = mask {
        let inside = |y: isize, x: isize| {
            y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && m.at(y as usize, x as usize) > 0.5
        };
        outline = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as isize, (i % w) as isize);
                let edge = inside(y, x)
                    && !(inside(y - 1, x) && inside(y + 1, x) && inside(y, x - 1) && inside(y, x + 1));
                if edge {
                    1.0
                } else {
                    image.data[i]
                }
            })
            .collect();
        columns.push(&outline);
    }
    let k = columns.len();
    let mut data = Vec::with_capacity(h * w * k);
    for y in 0..h {
        for col in &columns {
            data.extend_from_slice(&col[y * w..(y + 1) * w]);
        }
    }
    Ok(Panel {
        image: Gray {
            height: h,
            width: w * k,
            data,
        },
        panels: k,
    })
}

impl Panel {
    pub fn to_pgm(&self) -> Vec<u8> {
        encode_pgm(&self.image)
    }

    /// One rectangle per horizontal run of equal 8-bit gray level.
    pub fn to_svg(&self) -> String {
        let g = &self.image;
        let mut s = format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}" width="{w2}" height="{h2}" shape-rendering="crispEdges">
"#,
            w = g.width,
            h = g.height,
            w2 = g.width * 2,
            h2 = g.height * 2
        );
        for y in 0..g.height {
            let mut x = 0;
            while x < g.width {
                let q = quantize(g.at(y, x));
                let mut end = x + 1;
                while end < g.width && quantize(g.at(y, end)) == q {
                    end += 1;
                }
                let _ = writeln!(
                    s,
                    r##"<rect x="{x}" y="{y}" width="{}" height="1" fill="#{q:02x}{q:02x}{q:02x}"/>"##,
                    end - x
                );
                x = end;
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_starts_cover_the_edge() {
        assert_eq!(window_starts(10, 4, 3), vec![0, 3, 6]);
        assert_eq!(window_starts(11, 4, 3), vec![0, 3, 6, 7]);
        assert_eq!(window_starts(8, 8, 8), vec![0]);
    }

    #[test]
    fn localization_basics() {
        let mask = Gray::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let inside = Gray::new(2, 2, vec![0.7, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(localization_score(&inside, &mask).unwrap(), 1.0);
        let uniform = Gray::new(2, 2, vec![0.5; 4]).unwrap();
        assert_eq!(localization_score(&uniform, &mask).unwrap(), 0.25);
        let empty = Gray::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(localization_score(&uniform, &empty).is_err());
    }

    #[test]
    fn panel_layout() {
        let img = Gray::new(3, 4, (0..12).map(|i| i as f64 / 11.0).collect()).unwrap();
        let zero = Gray::new(3, 4, vec![0.0; 12]).unwrap();
        let p = render_overlay(&img, &zero, None).unwrap();
        assert_eq!((p.image.height, p.image.width, p.panels), (3, 12, 3));
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(p.image.at(y, 8 + x), img.at(y, x));
            }
        }
        let with_mask = render_overlay(&img, &zero, Some(&zero)).unwrap();
        assert_eq!(with_mask.image.width, 16);
        let bad = Gray::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(render_overlay(&img, &bad, None).is_err());
        assert!(p.to_svg().contains(r#"viewBox="0 0 12 3""#));
    }

    #[test]
    fn method_names() {
        for m in [Method::GradCam, Method::GradCamPp, Method::Occlusion] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!(matches!("lime".parse::<Method>(), Err(Error::Usage(_))));
    }
}
