//! Rank-pools sliding windows of a synthetic video into dynamic images,
//! compares the two solvers on one window and writes PPM previews.
//!
//! cargo run --release --example dynamic_images -- [out_dir]

use dipred::rankpool::{
    di_sequence, rank_pool_features, running_means, RankPoolConfig, Solver,
};
use dipred::video::{gen_synthetic, sliding_windows, write_ppm, ActionScript, WindowSpec};

fn main() -> dipred::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("dipred_dynamic_images"));

    let script = ActionScript::random(11, 4, 4, (25, 35), (0, 10))?;
    let video = gen_synthetic(&script, 32, 40)?;
    let spec = WindowSpec::new(30, 5)?;

    let windows = sliding_windows(&video, spec)?;
    let features = running_means(windows[0].frames);
    for solver in [Solver::DualCoordinate, Solver::Subgradient] {
        let cfg = RankPoolConfig { solver, ..RankPoolConfig::default() };
        let t = std::time::Instant::now();
        let sol = rank_pool_features(&features, &cfg)?;
        println!(
            "{solver:<12} objective {:.8} after {} iterations in {:?}",
            sol.objective,
            sol.iterations,
            t.elapsed()
        );
    }

    let dis = di_sequence(&video, spec, &RankPoolConfig::default())?;
    println!("{} frames, {} windows -> {} dynamic images", video.len(), spec.count(video.len()), dis.len());

    std::fs::create_dir_all(&out)?;
    for (i, di) in dis.iter().enumerate() {
        let label = di.label.map_or("-".to_string(), |c| c.to_string());
        println!(
            "  di {i:>2} start {:>3} label {label:>2} raw range [{:+.4}, {:+.4}]",
            di.source.start_frame, di.norm_bounds.0, di.norm_bounds.1
        );
        write_ppm(&out.join(format!("di_{i:03}.ppm")), &di.normalized())?;
    }
    println!("previews in {}", out.display());
    Ok(())
}
