use std::collections::BTreeMap;

use crate::error::{JadceError, Result};
use crate::reduction::RankPolicy;
use crate::scenario::{ChannelModel, PilotKind, SystemConfig};

use super::{AlgorithmSpec, ExperimentSpec, ParamSource, Sweep, SweepAxis, TrainingSpec};

pub const PRESET_NAMES: [&str; 10] = [
    "fig3-desk",
    "fig4-desk",
    "fig5-desk",
    "fig6-desk",
    "fig7-desk",
    "fig8-desk",
    "fig9-desk",
    "fig10-desk",
    "fig11-desk",
    "fig12-desk",
];

const DESK_TRIALS: usize = 50;

fn system(n: usize, m: usize, l: usize, eps: f64, snr_db: f64) -> SystemConfig {
    SystemConfig {
        n_devices: n,
        n_antennas: m,
        pilot_len: l,
        n_mixture: 3,
        activity_prob: eps,
        snr_db,
        v1: 0.1,
        n_paths: 3,
        // derived from snr_db per sweep point
        noise_var: 1.0,
    }
}

fn trained(outer_layers: usize, inner_layers: usize) -> AlgorithmSpec {
    AlgorithmSpec::FatDl {
        outer_layers,
        inner_layers,
        em: true,
        params: ParamSource::Trained,
    }
}

/// FAT-DL against the classical baselines at a fixed budget, for the AER sweeps.
fn aer_lineup() -> Vec<AlgorithmSpec> {
    vec![
        trained(2, 2),
        AlgorithmSpec::VampSt { layers: 10, alpha: 1.0 },
        AlgorithmSpec::AmpSt { layers: 10, alpha: 1.0 },
        AlgorithmSpec::Fista { max_iter: 500 },
        AlgorithmSpec::Omp,
    ]
}

/// Layer sweeps: every layered algorithm is run with `T` set to the sweep value.
fn layer_lineup() -> Vec<AlgorithmSpec> {
    vec![
        trained(1, 1),
        trained(1, 2),
        AlgorithmSpec::FatDl {
            outer_layers: 1,
            inner_layers: 2,
            em: true,
            params: ParamSource::Init,
        },
        AlgorithmSpec::VampSt { layers: 1, alpha: 1.0 },
        AlgorithmSpec::AmpSt { layers: 1, alpha: 1.0 },
    ]
}

fn notes(caption: &str, original: &str) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("caption".to_string(), caption.to_string()),
        ("original_scale".to_string(), original.to_string()),
        (
            "desk_scaling".to_string(),
            "N halved (fig8: N/10), L and M shrunk to keep L/N, 50 trials per point, 2000 training samples, \
             300 steps per phase instead of 1e6 updates over 100000 samples"
                .to_string(),
        ),
    ])
}

fn spec(
    id: &str,
    system: SystemConfig,
    pilot: PilotKind,
    axis: SweepAxis,
    values: &[f64],
    algorithms: Vec<AlgorithmSpec>,
    caption: &str,
    original: &str,
) -> ExperimentSpec {
    ExperimentSpec {
        id: id.to_string(),
        system,
        pilot,
        channel: ChannelModel::Spatial,
        sweep: Sweep {
            axis,
            values: values.to_vec(),
        },
        trials: DESK_TRIALS,
        seed: 2024,
        algorithms,
        rank_policy: None::<RankPolicy>,
        training: Some(TrainingSpec::default()),
        out_dir: None,
        notes: notes(caption, original),
    }
}

/// Desk-scale versions of the figure scenarios.
pub fn preset(name: &str) -> Result<ExperimentSpec> {
    let iid = PilotKind::IidGaussian;
    let s = match name {
        "fig3-desk" => spec(
            name,
            system(50, 16, 30, 0.05, 30.0),
            iid,
            SweepAxis::OuterLayers,
            &[1.0, 2.0, 3.0, 4.0],
            layer_lineup(),
            "NMSE vs outer layers, i.i.d. Gaussian pilots",
            "N=100 eps=0.05 L=60 M=64 SNR=30dB",
        ),
        "fig4-desk" => spec(
            name,
            system(50, 16, 30, 0.05, 30.0),
            PilotKind::Conditioned { kappa: 20.0 },
            SweepAxis::OuterLayers,
            &[1.0, 2.0, 3.0, 4.0],
            layer_lineup(),
            "NMSE vs outer layers, pilots with condition number 20",
            "N=100 eps=0.05 L=60 M=64 SNR=30dB",
        ),
        "fig5-desk" => spec(
            name,
            system(50, 16, 25, 0.2, 20.0),
            iid,
            SweepAxis::PilotLen,
            &[15.0, 20.0, 25.0, 30.0],
            aer_lineup(),
            "AER vs pilot length, i.i.d. Gaussian pilots",
            "N=100 eps=0.2 M=32 SNR=20dB",
        ),
        "fig6-desk" => spec(
            name,
            system(50, 32, 30, 0.3, 15.0),
            PilotKind::NonzeroMean { mu: 7.0 },
            SweepAxis::SnrDb,
            &[5.0, 10.0, 15.0, 20.0],
            aer_lineup(),
            "AER vs SNR, pilots with mean 7",
            "N=100 eps=0.3 M=64 L=60",
        ),
        "fig7-desk" => spec(
            name,
            system(50, 16, 30, 0.2, 15.0),
            iid,
            SweepAxis::Activity,
            &[0.1, 0.2, 0.3, 0.4],
            aer_lineup(),
            "AER vs activity probability, i.i.d. Gaussian pilots",
            "N=100 L=60 SNR=15dB",
        ),
        "fig8-desk" => spec(
            name,
            system(100, 16, 40, 0.1, 25.0),
            PilotKind::NonzeroMean { mu: 5.0 },
            SweepAxis::Antennas,
            &[4.0, 8.0, 16.0, 32.0],
            aer_lineup(),
            "AER vs number of antennas, pilots with mean 5",
            "N=1000 L=200 eps=0.1 SNR=25dB",
        ),
        "fig9-desk" => spec(
            name,
            system(50, 16, 25, 0.1, 15.0),
            iid,
            SweepAxis::TrainSize,
            &[250.0, 500.0, 1000.0, 2000.0],
            vec![trained(2, 2), AlgorithmSpec::VampSt { layers: 10, alpha: 1.0 }],
            "AER vs number of training samples, i.i.d. Gaussian pilots",
            "N=100 eps=0.1 M=32 SNR=15dB L=50",
        ),
        "fig10-desk" => spec(
            name,
            system(50, 16, 30, 0.1, 15.0),
            PilotKind::NonzeroMean { mu: 5.0 },
            SweepAxis::Mixture,
            &[1.0, 2.0, 3.0, 4.0],
            vec![trained(2, 2)],
            "AER vs number of mixture components, pilots with mean 5",
            "N=100 eps=0.1 M=32 SNR=15dB, J from 1 to 6",
        ),
        "fig11-desk" => spec(
            name,
            system(50, 32, 25, 0.1, 20.0),
            PilotKind::NonzeroMean { mu: 5.0 },
            SweepAxis::PilotLen,
            &[15.0, 20.0, 25.0, 30.0],
            vec![
                trained(2, 2),
                AlgorithmSpec::VampGm {
                    layers: 10,
                    params: ParamSource::Init,
                },
                AlgorithmSpec::VampSt { layers: 10, alpha: 1.0 },
            ],
            "AER vs pilot length, fixed versus learned mixture parameters, pilots with mean 5",
            "N=100 M=64 eps=0.1 SNR=20dB",
        ),
        "fig12-desk" => {
            let mut s = spec(
                name,
                system(50, 16, 25, 0.2, 20.0),
                iid,
                SweepAxis::PilotLen,
                &[15.0, 20.0, 25.0, 30.0],
                aer_lineup(),
                "AER vs pilot length, Bernoulli-Student's-t channels",
                "N=100 eps=0.2 M=32 SNR=20dB nu=1.9",
            );
            s.channel = ChannelModel::StudentT { nu: 1.9 };
            s
        }
        _ => {
            return Err(JadceError::invalid(format!(
                "unknown preset {name:?}; known: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESET_NAMES {
            preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn fig3_and_fig4() {
        let s = preset("fig3-desk").unwrap();
        assert_eq!(s.sweep.axis, SweepAxis::OuterLayers);
        assert_eq!(s.pilot, PilotKind::IidGaussian);
        let s = preset("fig4-desk").unwrap();
        assert_eq!(s.pilot, PilotKind::Conditioned { kappa: 20.0 });
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(preset("nope"), Err(JadceError::InvalidArgument(_))));
    }

    #[test]
    fn desk_budgets() {
        for name in PRESET_NAMES {
            let s = preset(name).unwrap();
            assert!(s.notes.contains_key("original_scale"));
            let t = s.training.unwrap();
            assert!(t.train_size <= 5000);
            for a in &s.algorithms {
                if let AlgorithmSpec::FatDl { inner_layers, .. } = a {
                    assert!(*inner_layers <= 2);
                }
            }
            if s.sweep.axis == SweepAxis::OuterLayers {
                assert!(s.sweep.values.iter().all(|v| *v <= 4.0));
            }
        }
    }
}
