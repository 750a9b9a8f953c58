//! Static top-down SVG rendering of a city and the planned trajectories:
//! buildings as height-shaded rectangles, one colored polyline with waypoint
//! markers per drone, and translucent camera-footprint disks.

use skysweep::city::CityModel;
use skysweep::metrics::FovParams;
use skysweep::scenario::Trajectories;

/// One stroke color per drone, cycled if the fleet outgrows the palette.
const PALETTE: [&str; 10] = [
    "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#e377c2", "#8c564b",
    "#bcbd22", "#636363",
];

/// Renders the scene in grid coordinates (1 SVG unit = 1 m = 1 cell pitch).
/// The `y` axis points down the page; the arena spans `[0, S-1]²` with a one
/// meter margin in the view box.
pub fn render_svg(city: &CityModel, trajs: &Trajectories, fov: &FovParams) -> String {
    let s = city.grid_size();
    let span = (s - 1) as f64;
    let view = s as f64 + 1.0;
    let mut doc = String::new();
    doc.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"-1 -1 {view} {view}\">\n"
    ));
    doc.push_str(&format!(
        "  <desc>Top-down scene, 1 unit = 1 m, arena [0,{span}] squared, \
         buildings shaded darker with height</desc>\n"
    ));
    doc.push_str(&format!(
        "  <path d=\"M 0 0 H {span} V {span} H 0 Z\" fill=\"none\" \
         stroke=\"#000000\" stroke-width=\"0.2\"/>\n"
    ));

    let tallest = city
        .raw_heights()
        .iter()
        .fold(0.0f64, |acc, &h| acc.max(h))
        .max(1.0);
    for (x0, y0, w, l, h) in building_rectangles(city) {
        let gray = (210.0 - 150.0 * h / tallest).round() as u8;
        doc.push_str(&format!(
            "  <rect x=\"{}\" y=\"{}\" width=\"{w}\" height=\"{l}\" \
             fill=\"rgb({gray},{gray},{gray})\"/>\n",
            x0 as f64 - 0.5,
            y0 as f64 - 0.5,
        ));
    }

    let (n, t_count) = trajs.dims();
    for k in 0..n {
        let color = PALETTE[k % PALETTE.len()];
        for t in 0..t_count {
            let [x, y, z] = trajs.at(k, t);
            let r = fov.radius_at(z).max(0.0);
            doc.push_str(&format!(
                "  <circle cx=\"{x}\" cy=\"{y}\" r=\"{r}\" fill=\"{color}\" \
                 fill-opacity=\"0.1\"/>\n"
            ));
        }
    }
    for k in 0..n {
        let color = PALETTE[k % PALETTE.len()];
        if t_count >= 2 {
            let points: Vec<String> = (0..t_count)
                .map(|t| {
                    let [x, y, _] = trajs.at(k, t);
                    format!("{x},{y}")
                })
                .collect();
            doc.push_str(&format!(
                "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                 stroke-width=\"0.3\"/>\n",
                points.join(" ")
            ));
        }
        for t in 0..t_count {
            let [x, y, _] = trajs.at(k, t);
            doc.push_str(&format!(
                "  <circle cx=\"{x}\" cy=\"{y}\" r=\"0.35\" fill=\"{color}\"/>\n"
            ));
        }
    }

    doc.push_str("</svg>\n");
    doc
}

/// Greedy maximal-rectangle cover of the occupancy grid, merging runs of
/// equal height. Buildings are generated as uniform-height rectangles, so
/// this recovers them exactly (or merges flush neighbors of equal height).
fn building_rectangles(city: &CityModel) -> Vec<(usize, usize, usize, usize, f64)> {
    let s = city.grid_size();
    let mut consumed = vec![false; s * s];
    let mut rects = Vec::new();
    for &(x, y) in city.obstacle_cells() {
        if consumed[x * s + y] {
            continue;
        }
        let h = city.raw_at(x, y);
        let free = |cx: usize, cy: usize, consumed: &[bool]| {
            !consumed[cx * s + cy] && city.raw_at(cx, cy) == h
        };
        let mut l = 1;
        while y + l < s && free(x, y + l, &consumed) {
            l += 1;
        }
        let mut w = 1;
        while x + w < s && (y..y + l).all(|cy| free(x + w, cy, &consumed)) {
            w += 1;
        }
        for cx in x..x + w {
            for cy in y..y + l {
                consumed[cx * s + cy] = true;
            }
        }
        rects.push((x, y, w, l, h));
    }
    rects
}
