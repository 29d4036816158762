//! Renders a foveated copy of an image: sharp inside the fovea, Gaussian
//! blurred outside, with a narrow cross-fade between the two.
//!
//! ```text
//! cargo run --example foveate_image -- [input.png] [output.png] [x] [y]
//! ```
//!
//! Without an input a 320×200 test pattern is generated.

use foveal::foveation::{foveate_image, FoveationConfig, Image};

fn main() -> foveal::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let img = match args.first() {
        Some(p) => {
            let rgb = image::open(p).map_err(|e| foveal::Error::Image(e.to_string()))?.to_rgb8();
            Image::from_rgb8(&rgb)
        }
        None => {
            let (w, h) = (320, 200);
            let data = (0..w * h)
                .flat_map(|i| {
                    let (x, y) = (i % w, i / w);
                    let check = if (x / 8 + y / 8) % 2 == 0 { 230.0 } else { 25.0 };
                    [check, 255.0 * x as f64 / w as f64, 255.0 * y as f64 / h as f64]
                })
                .collect();
            Image::new(w, h, 3, data)?
        }
    };
    let out = args.get(1).cloned().unwrap_or_else(|| "foveated.png".into());
    let x = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(img.width as f64 / 2.0);
    let y = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(img.height as f64 / 2.0);

    let cfg = FoveationConfig {
        fovea_px: 50.0,
        sigma: 3.0,
        ..Default::default()
    };
    let fov = foveate_image(&img, x, y, &cfg)?;
    fov.to_rgb8().save(&out).map_err(|e| foveal::Error::Image(e.to_string()))?;
    println!("{}×{} image fixated at ({x}, {y}) written to {out}", img.width, img.height);
    Ok(())
}
