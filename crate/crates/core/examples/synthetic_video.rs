//! Generates a labelled synthetic action video and writes its frames as PPM.
//!
//! cargo run --example synthetic_video -- [out_dir]

use dipred::classifier::LabelTimeline;
use dipred::video::synthetic::class_names;
use dipred::video::{gen_synthetic, save_frames, ActionScript};

fn main() -> dipred::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("dipred_synthetic_video"));

    let script = ActionScript::random(7, 5, 4, (20, 40), (0, 15))?;
    let video = gen_synthetic(&script, 32, 40)?;
    let names = class_names();

    println!("{} frames of {:?}", video.len(), video.frame_size());
    let timeline = LabelTimeline::new(video.labels().unwrap_or_default().to_vec());
    for seg in timeline.segments() {
        let name = seg.class.index().map_or("(gap)", |i| names[i].as_str());
        println!("  frames {:>3}..{:<3} {}", seg.start, seg.end, name);
    }

    std::fs::create_dir_all(&out)?;
    let paths = save_frames(&video, &out)?;
    timeline.write_csv(&out.join("labels.csv"))?;
    std::fs::write(out.join("script.txt"), script.to_text())?;
    println!("wrote {} frames to {}", paths.len(), out.display());
    Ok(())
}
