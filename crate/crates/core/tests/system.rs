use dkf_core::system::cyclic_sensor_types;
use dkf_core::{make_tracking_model, make_tracking_sensors, simulate, DkfError};
use nalgebra::{DMatrix, DVector};

/// Sample mean and covariance of a list of vectors.
fn moments(samples: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = samples.len() as f64;
    let mean = samples.iter().fold(DVector::zeros(samples[0].len()), |acc, s| acc + s) / n;
    let cov = samples.iter().fold(DMatrix::zeros(mean.len(), mean.len()), |acc, s| {
        let d = s - &mean;
        acc + &d * d.transpose()
    }) / (n - 1.0);
    (mean, cov)
}

#[test]
fn first_step_moments_follow_the_model() {
    let plant = make_tracking_model(0.5).unwrap();
    let sensors = make_tracking_sensors(&plant, &cyclic_sensor_types(3)).unwrap();
    let reps = 20_000;
    let mut x1 = Vec::with_capacity(reps);
    let mut y1 = Vec::with_capacity(reps);
    for seed in 0..reps as u64 {
        let t = simulate(&plant, &sensors, 1, seed).unwrap();
        y1.push(&t.measurements[0][0] - sensors.c(0) * &t.states[1]);
        x1.push(t.states[1].clone());
    }
    let (mean, cov) = moments(&x1);
    let expect_mean = &plant.a * &plant.x0_mean;
    let expect_cov = &plant.a * &plant.p0 * plant.a.transpose() + &plant.q;
    for i in 0..4 {
        let se = (expect_cov[(i, i)] / reps as f64).sqrt();
        assert!((mean[i] - expect_mean[i]).abs() < 4.0 * se, "mean {i}");
        for j in 0..4 {
            // Var of a sample covariance entry is (Σ_ij² + Σ_ii Σ_jj)/n for Gaussians
            let sd = ((expect_cov[(i, j)].powi(2) + expect_cov[(i, i)] * expect_cov[(j, j)]) / reps as f64).sqrt();
            assert!((cov[(i, j)] - expect_cov[(i, j)]).abs() < 5.0 * sd, "cov ({i},{j})");
        }
    }
    let (_, noise) = moments(&y1);
    let r = sensors.r(0)[(0, 0)];
    assert!((noise[(0, 0)] / r - 1.0).abs() < 5.0 * (2.0 / reps as f64).sqrt());
}

#[test]
fn trajectories_are_reproducible_per_seed() {
    let plant = make_tracking_model(0.1).unwrap();
    let sensors = make_tracking_sensors(&plant, &cyclic_sensor_types(6)).unwrap();
    let a = simulate(&plant, &sensors, 25, 42).unwrap();
    let b = simulate(&plant, &sensors, 25, 42).unwrap();
    let c = simulate(&plant, &sensors, 25, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.states, c.states);
    assert_eq!(a.steps(), 25);
    assert_eq!(a.states.len(), 26);
    assert_eq!(a.measurements[0].len(), 6);
    assert!(matches!(simulate(&plant, &sensors, 0, 1), Err(DkfError::InvalidArgument(_))));
}

#[test]
fn naive_nodes_carry_no_information() {
    let plant = make_tracking_model(0.1).unwrap();
    let sensors = make_tracking_sensors(&plant, &cyclic_sensor_types(6)).unwrap();
    assert_eq!(sensors.naive_nodes(), vec![2, 5]);
    let total = sensors.total_information();
    let direct: DMatrix<f64> = (0..6).map(|i| sensors.c(i).transpose() * sensors.r(i).clone().try_inverse().unwrap() * sensors.c(i)).sum();
    assert!((total - direct).norm() < 1e-9);
    // a network of position-x sensors alone cannot see the y axis
    let only_x = make_tracking_sensors(&plant, &[dkf_core::SensorType::PositionX; 3]);
    assert!(matches!(only_x, Err(DkfError::CollectivelyUnobservable)));
}
