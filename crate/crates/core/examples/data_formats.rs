//! Loads the bundled MNIST subset from IDX files, writes a slice of it back
//! out, and reads a small delimited-text dataset with fixed column ranges.

use stfseb::data::{load_delimited_with_ranges, load_idx, load_idx_images, write_idx};

fn main() -> stfseb::Result<()> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/mnist-subset");
    let images = dir.join("train-images-idx3-ubyte");
    let train = load_idx(&images, dir.join("train-labels-idx1-ubyte"))?;
    let (_, (h, w)) = load_idx_images(&images)?;
    let mut counts = vec![0usize; train.num_classes()];
    train.labels().iter().for_each(|&y| counts[y] += 1);
    println!(
        "{}: {} images of {h}x{w}, {} classes, per-class counts {counts:?}",
        train.name(),
        train.len(),
        train.num_classes()
    );

    let tmp = std::env::temp_dir().join("stfseb-data-example");
    std::fs::create_dir_all(&tmp).map_err(|e| stfseb::Error::Domain(e.to_string()))?;
    let first: Vec<usize> = (0..100).collect();
    let slice = train.subset(&first);
    let (ip, lp) = (tmp.join("images"), tmp.join("labels"));
    write_idx(&slice, h, w, &ip, &lp)?;
    let back = load_idx(&ip, &lp)?;
    println!(
        "round trip of {} images: labels equal {}, inputs equal {}",
        back.len(),
        back.labels() == slice.labels(),
        back.inputs() == slice.inputs()
    );

    let csv = tmp.join("points.csv");
    std::fs::write(&csv, "# label,x0,x1\n0,0.5,1.0\n1,1.0,3.0\n1,0.0,4.0\n")
        .map_err(|e| stfseb::Error::Domain(e.to_string()))?;
    let d = load_delimited_with_ranges(&csv, 2, Some(&[(0.0, 1.0), (0.0, 4.0)]))?;
    for i in 0..d.len() {
        println!("  {:?} -> class {}", d.inputs().row(i), d.labels()[i]);
    }
    Ok(())
}
