use vst::config::RunConfig;
use vst::model::{Modality, VstConfig};

#[test]
fn shipped_configs_parse() {
    let toy = RunConfig::parse(include_str!("../../../configs/toy.toml"), &[]).unwrap();
    assert_eq!(toy.model, VstConfig::toy());
    assert_eq!(toy.training.base_lr, 2e-3);
    let rgb = RunConfig::parse(include_str!("../../../configs/rgb.toml"), &[]).unwrap();
    assert_eq!(rgb.model, VstConfig::default());
    let rgbd = RunConfig::parse(include_str!("../../../configs/rgbd.toml"), &[]).unwrap();
    assert_eq!(rgbd.model.modality, Modality::Rgbd);
    assert_eq!((rgbd.training.total_steps, rgbd.training.batch_size), (60_000, 8));
}
