use cowdet_core::dataset::synthetic::{gen_synthetic, GenOptions};
use cowdet_core::dataset::{label_path_for, parse_label_file, save_manifest, Split};
use cowdet_core::detector::{assign_targets, forward, DetectorConfig};
use cowdet_core::eval::evaluate;
use cowdet_core::imagebuf::ImageBuf;
use cowdet_core::train::{train, OptimizerKind, TrainOptions};

fn sigmoid(x: f64) -> f64 { 1.0 / (1.0 + (-x).exp()) }

#[test]
fn probe_overfit_diag() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = gen_synthetic(&GenOptions::new(8, 0.3, 42), dir.path()).unwrap();
    for r in &mut manifest.images {
        r.split = Split::Train;
    }
    let path = dir.path().join("manifest.json");
    save_manifest(&manifest, &path).unwrap();

    let cfg = DetectorConfig::desk();
    let opts = TrainOptions {
        optimizer: OptimizerKind::Sgd,
        epochs: 300,
        batch_size: 8,
        seed: 7,
        workers: 4,
        ..TrainOptions::default()
    };
    let (weights, log) = train(&manifest, &path, &cfg, &opts).unwrap();
    let last = log.epochs.last().unwrap();
    println!("final: loss {:.4} obj {:.4} box {:.4} cls {:.4}", last.loss, last.loss_obj, last.loss_box, last.loss_cls);

    for rec in manifest.images.iter().take(3) {
        let img = ImageBuf::load(&dir.path().join(&rec.path)).unwrap();
        let labels = parse_label_file(&label_path_for(&path, &rec.id), false).unwrap();
        let gts: Vec<(u32, cowdet_core::geometry::NormBox)> =
            labels.entries.iter().map(|e| (e.category_id, e.bbox)).collect();
        let targets = assign_targets(&gts, &cfg).unwrap();
        let preds = forward(&img.to_tensor(), &weights, &cfg).unwrap();
        println!("image {} gts {}", rec.id, gts.len());
        for (hi, ht) in targets.heads.iter().enumerate() {
            for pos in &ht.positives {
                let planes = &preds.heads[hi].planes;
                let obj = sigmoid(planes.at3(0, pos.row, pos.col) as f64);
                let cls = sigmoid(planes.at3(1, pos.row, pos.col) as f64);
                let (dl, dt, dr, db) = (
                    planes.at3(2, pos.row, pos.col),
                    planes.at3(3, pos.row, pos.col),
                    planes.at3(4, pos.row, pos.col),
                    planes.at3(5, pos.row, pos.col),
                );
                let s = ht.stride as f64;
                let ccx = (pos.col as f64 + 0.5) * s;
                let ccy = (pos.row as f64 + 0.5) * s;
                println!(
                    "  head s{} cell ({},{}) obj {obj:.3} cls {cls:.3} score {:.3} pred box ({:.1},{:.1},{:.1},{:.1}) gt ({:.1},{:.1},{:.1},{:.1})",
                    ht.stride, pos.row, pos.col, obj * cls,
                    ccx - dl as f64, ccy - dt as f64, ccx + dr as f64, ccy + db as f64,
                    pos.gt[0], pos.gt[1], pos.gt[2], pos.gt[3],
                );
            }
        }
    }
    let report = evaluate(&manifest, &path, Split::Train, &weights, &cfg, false, 4).unwrap();
    println!("AP50 {:.4} dets {}", report.overall.ap50, report.counts.detections);
}
