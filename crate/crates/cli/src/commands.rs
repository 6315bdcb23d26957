use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use roadscan_core::cloud::{Downsample, LabeledCloud, PointCloud};
use roadscan_core::io::{self, format_sig9, CloudFormat, Loaded};
use roadscan_core::metrics::{confusion, report, table_report};
use roadscan_core::pipeline::{detect as run_pipeline, format_obstacles, vehicle_frame};
use roadscan_core::projection::{fill_gaps, render_classes, write_image};
use roadscan_core::saliency::analyze;
use roadscan_core::segmentation::VehicleState;
use roadscan_core::synth::{format_manifest, generate_route, generate_scene};
use roadscan_core::Vec3;
use roadscan_registry::{agent_replay, Client, Frame, Server};
use nalgebra::DMatrix;
use thiserror::Error;

use crate::config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration or input files.
    #[error("{0}")]
    Input(String),
    /// The requested work itself failed.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

fn input_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn io_err(path: &Path, e: io::IoError) -> CliError {
    match e {
        io::IoError::Io { .. } => CliError::Input(e.to_string()),
        e => input_err(path, e),
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| failed(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    io::save_text(path, text).map_err(failed)
}

fn load(path: &Path) -> Result<Loaded, CliError> {
    io::load_cloud(path, CloudFormat::from_path(path)).map_err(|e| io_err(path, e))
}

fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for r in m.row_iter() {
        let row: Vec<String> = r.iter().map(|&v| format_sig9(v)).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

pub fn detect(input: &Path, output: &Path, saliency: bool, dump_rpca: bool, cfg: &RunConfig) -> Result<(), CliError> {
    let (cloud, truth) = match load(input)? {
        Loaded::Plain(c) => (c, None),
        Loaded::Labeled(l) => {
            let l = l.downsample(cfg.ratio, cfg.seed).map_err(|e| input_err(input, e))?;
            let (c, labels) = l.into_parts();
            (c, Some(labels))
        }
    };
    let cloud = if truth.is_some() { cloud } else { cloud.downsample(cfg.ratio, cfg.seed).map_err(|e| input_err(input, e))? };

    let det = run_pipeline(&cloud, &cfg.vehicle, &cfg.pipeline).map_err(failed)?;
    out_dir(output)?;
    io::save_xyz_id(&cloud, &det.segmented.class_ids(), &output.join("segmented.xyz")).map_err(failed)?;
    let predicted = LabeledCloud::new(cloud.clone(), det.predicted_potholes()).map_err(failed)?;
    io::save_labeled(&predicted, &output.join("predicted.xyzl")).map_err(failed)?;
    if let Some(labels) = truth {
        let truth = LabeledCloud::new(cloud.clone(), labels).map_err(failed)?;
        io::save_labeled(&truth, &output.join("truth.xyzl")).map_err(failed)?;
    }
    write_text(&output.join("obstacles.txt"), &format_obstacles(&det.obstacles))?;
    if saliency {
        io::save_xyz_value(&cloud, &det.saliency.fused, &output.join("saliency.xyz")).map_err(failed)?;
    }
    if dump_rpca {
        let a = analyze(&vehicle_frame(&cloud, &cfg.vehicle), &cfg.pipeline.saliency).map_err(failed)?;
        write_text(&output.join("rpca_low_rank.txt"), &format_matrix(&a.rpca.low_rank))?;
        write_text(&output.join("rpca_sparse.txt"), &format_matrix(&a.rpca.sparse))?;
        let sv: String = a.rpca.singular_values.iter().map(|&v| format_sig9(v) + "\n").collect();
        write_text(&output.join("rpca_singular_values.txt"), &sv)?;
    }

    println!("points {}", cloud.len());
    println!("obstacles {}", det.obstacles.len());
    for (id, o) in det.obstacles.iter().enumerate() {
        println!("  {id} {} at ({:.2}, {:.2}) with {} points", o.kind, o.centroid.x, o.centroid.y, o.descriptor.point_count);
    }
    println!("rpca rank {} iterations {} converged {}", det.rpca_rank, det.rpca_iterations, det.rpca_converged);
    Ok(())
}

pub fn synth_scene(output: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let scene = generate_scene(&cfg.scene).map_err(|e| CliError::Input(e.to_string()))?;
    out_dir(output)?;
    io::save_labeled(&scene.cloud, &output.join("scene.xyzl")).map_err(failed)?;
    write_text(&output.join("manifest.txt"), &format_manifest(&scene.potholes))?;
    let labeled = scene.cloud.labels().iter().filter(|&&l| l).count();
    println!("points {} labeled {} potholes {}", scene.cloud.len(), labeled, scene.potholes.len());
    Ok(())
}

const ROUTE_FILE: &str = "route.txt";

pub fn synth_route(output: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let frames = generate_route(&cfg.route).map_err(|e| CliError::Input(e.to_string()))?;
    out_dir(output)?;
    let mut index = String::from("# file x y z yaw steering\n");
    for (i, f) in frames.iter().enumerate() {
        let name = format!("frame_{i:03}.xyzl");
        io::save_labeled(&f.cloud, &output.join(&name)).map_err(failed)?;
        let v = &f.vehicle;
        let h = v.heading();
        let pose = [v.position.x, v.position.y, v.position.z, h.y.atan2(h.x), v.steering_angle()];
        let pose: Vec<String> = pose.iter().map(|&x| format_sig9(x)).collect();
        let _ = writeln!(index, "{name} {}", pose.join(" "));
    }
    write_text(&output.join(ROUTE_FILE), &index)?;
    println!("frames {}", frames.len());
    Ok(())
}

fn load_route(path: &Path) -> Result<Vec<Frame>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| input_err(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut frames = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || input_err(path, format!("line {}: expected 'file x y z yaw steering'", i + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [file, rest @ ..] = &fields[..] else { return Err(bad()) };
        let nums: Vec<f64> = rest.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
        let [x, y, z, yaw, steering] = nums[..] else { return Err(bad()) };
        let vehicle = VehicleState::from_yaw(Vec3::new(x, y, z), yaw, steering).map_err(|e| input_err(path, e))?;
        let cloud: PointCloud = load(&base.join(PathBuf::from(file)))?.into_cloud();
        frames.push(Frame { cloud, vehicle });
    }
    if frames.is_empty() {
        return Err(input_err(path, "no frames"));
    }
    Ok(frames)
}

pub fn eval(input: &Path, truth: &Path, output: Option<&Path>, cfg: &RunConfig) -> Result<(), CliError> {
    let pred = io::load_labeled(input).map_err(|e| io_err(input, e))?;
    let gt = io::load_labeled(truth).map_err(|e| io_err(truth, e))?;
    if pred.len() != gt.len() {
        return Err(CliError::Input(format!("{} vertices predicted, {} in truth", pred.len(), gt.len())));
    }
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-6 * (1.0 + a.abs().max(b.abs()));
    let mismatch = pred.cloud.vertices().iter().zip(gt.cloud.vertices()).position(|(p, q)| {
        !(same(p.x, q.x) && same(p.y, q.y) && same(p.z, q.z))
    });
    if let Some(i) = mismatch {
        return Err(CliError::Input(format!("vertex {i} differs between prediction and truth")));
    }
    let cm = confusion(pred.labels(), gt.labels()).map_err(failed)?;
    let r = report(&cm);
    let model = input.file_stem().map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned());
    let table = table_report(&[(model, vec![r])], &[cfg.ratio]).map_err(failed)?;
    let show = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    println!("tp {} fp {} tn {} fn {}", cm.tp, cm.fp, cm.tn, cm.fn_);
    println!(
        "precision {} recall {} accuracy {} f_score {}",
        show(r.precision),
        show(r.recall),
        show(r.accuracy),
        show(r.f_score)
    );
    print!("{}", table.text);
    if let Some(path) = output {
        write_text(path, &table.csv)?;
    }
    Ok(())
}

pub fn render(input: &Path, output: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let camera = cfg.camera.as_ref().ok_or_else(|| CliError::Input("render needs a camera (--camera or camera.* keys)".into()))?;
    let (cloud, values) = io::load_xyz_value(input).map_err(|e| io_err(input, e))?;
    let ids = values
        .iter()
        .map(|&v| (v.fract() == 0.0 && (0.0..=255.0).contains(&v)).then_some(v as u8))
        .collect::<Option<Vec<u8>>>()
        .ok_or_else(|| input_err(input, "class ids must be integers in 0..=255"))?;
    let mut image = render_classes(cloud.vertices(), &ids, camera).map_err(failed)?;
    if cfg.fill > 0 {
        image = fill_gaps(&image, cfg.fill, cfg.connectivity);
    }
    write_image(&image, &cfg.palette, output, cfg.ppm).map_err(failed)?;
    println!("painted {} of {} pixels", image.painted(), image.width as usize * image.height as usize);
    Ok(())
}

pub fn serve(cfg: &RunConfig) -> Result<(), CliError> {
    let server = Server::bind(&cfg.server).map_err(failed)?;
    println!("listening {}", server.local_addr());
    let _ = std::io::stdout().flush();
    server.run().map_err(failed)
}

pub fn replay(input: &Path, output: Option<&Path>, cfg: &RunConfig) -> Result<(), CliError> {
    let frames = load_route(input)?;
    let mut client = Client::connect(cfg.server.endpoint.as_str(), &cfg.agent).map_err(failed)?;
    let report = agent_replay(&frames, &mut client, &cfg.replay);
    let summary = report.summary();
    print!("{summary}");
    if let Some(path) = output {
        write_text(path, &summary)?;
    }
    match &report.aborted {
        Some(e) => Err(CliError::Failed(format!("replay aborted: {e}"))),
        None => {
            let _ = client.close();
            Ok(())
        }
    }
}
