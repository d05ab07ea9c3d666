pub mod gendata;
pub mod gradcheck;
pub mod probe;
pub mod train;
pub mod verify;

/// Header of each per-run training log.
pub const TRAIN_LOG_HEADER: &str = "epoch,loss,wall_ms";
/// Header of `probe.csv`.
pub const PROBE_HEADER: &str = "seed,loss_kind,tau_plus,accuracy";
/// Header of `gradcheck.csv`.
pub const GRADCHECK_HEADER: &str =
    "config,loss_kind,input_dim,output_dim,hidden,batch_size,positives,tau_plus,max_rel_err,excluded,coordinates,passed";
/// Header of `rate.csv`.
pub const RATE_HEADER: &str = "variable,size,mean_gap,stderr";
/// Header of `samples.csv`.
pub const SAMPLES_HEADER: &str = "index,class,point,features";

/// Substream of a run seed that feeds the linear probe's data.
pub const PROBE_STREAM: u64 = 7;
