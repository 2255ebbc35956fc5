#![no_main]

use imaginenet::fusion::FusionModel;
use imaginenet::nn::Checkpoint;
use libfuzzer_sys::fuzz_target;

// first byte picks the feature width, the rest is the checkpoint
fuzz_target!(|data: &[u8]| {
    let Some((&dim, bytes)) = data.split_first() else { return };
    let Ok(ckpt) = Checkpoint::decode(bytes) else { return };
    assert_eq!(ckpt.encode(), bytes);
    if let Ok(model) = FusionModel::from_checkpoint(&ckpt, usize::from(dim).max(2)) {
        assert_eq!(model.to_checkpoint().unwrap().tensors.len(), ckpt.tensors.len());
    }
});
