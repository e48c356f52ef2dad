//! Simulated semantic sensing.

use std::cmp::Ordering;
use std::f64::consts::TAU;

use rand::RngExt;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{GeometricPriors, NoiseParams};
use crate::rng::Rng;
use crate::world::{ObjectId, ObjectKind, Pose2, Vec2, WorldState};

/// Slack allowed between the line-of-sight beam and the target distance.
const LOS_SLACK: f64 = 0.1;
const SAMPLE_STEP: f64 = 0.02;
const SAMPLE_RADIUS: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    Object(ObjectId),
    Spurious(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCandidate {
    pub hypothesis: Hypothesis,
    pub confidence: f64,
    pub measured_width: f64,
    pub measured_height: f64,
    pub measured_target_height: f64,
    pub measured_target_point: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimate {
    pub center: Vec2,
    pub height: f64,
    pub normal: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerceptionError {
    #[error("fewer than two surface samples near the target")]
    DegenerateSurface,
    #[error("detection does not reference a known object")]
    NotAnObject,
}

fn gauss(rng: &mut Rng, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * sigma
}

/// Whether the target of `id` is visible from `from` within `range`.
pub fn line_of_sight(world: &WorldState, id: ObjectId, from: Vec2, range: f64) -> bool {
    let Ok(point) = world.target_point(id) else {
        return false;
    };
    let dist = from.distance(point);
    if dist > range {
        return false;
    }
    let map = world.occupancy_excluding(id);
    let angle = (point - from).angle();
    map.cast_beam(from, angle, dist) >= dist - LOS_SLACK
}

/// One noisy candidate per visible object, followed by Poisson-many spurious
/// candidates. Draw order is fixed, so the output depends only on the inputs
/// and the generator state.
pub fn sense_candidates(
    world: &WorldState,
    robot: &Pose2,
    noise: &NoiseParams,
    rng: &mut Rng,
) -> Vec<DetectionCandidate> {
    let origin = robot.position();
    let mut out = Vec::new();
    for obj in world.objects() {
        if !line_of_sight(world, obj.id, origin, noise.sensing_range) {
            continue;
        }
        let Ok(target) = world.target_of(obj.id) else {
            continue;
        };
        let point = target.current_point(obj);
        let conf = (1.0 - noise.conf_drop + gauss(rng, noise.conf_sigma)).clamp(0.0, 1.0);
        out.push(DetectionCandidate {
            hypothesis: Hypothesis::Object(obj.id),
            confidence: conf,
            measured_width: obj.width + gauss(rng, noise.sigma_dim),
            measured_height: obj.height + gauss(rng, noise.sigma_dim),
            measured_target_height: target.height + gauss(rng, noise.sigma_h),
            measured_target_point: Vec2::new(
                point.x + gauss(rng, noise.sigma_pos),
                point.y + gauss(rng, noise.sigma_pos),
            ),
        });
    }
    let count = if noise.lambda_fp > 0.0 {
        Poisson::new(noise.lambda_fp)
            .map(|p| p.sample(rng) as u32)
            .unwrap_or(0)
    } else {
        0
    };
    for k in 0..count {
        let r = noise.sensing_range * rng.random::<f64>().sqrt();
        let a = rng.random::<f64>() * TAU;
        out.push(DetectionCandidate {
            hypothesis: Hypothesis::Spurious(k),
            confidence: rng.random_range(0.3..0.95),
            measured_width: rng.random_range(0.2..3.0),
            measured_height: rng.random_range(0.2..3.0),
            measured_target_height: rng.random_range(0.0..2.0),
            measured_target_point: origin + Vec2::from_angle(a) * r,
        });
    }
    out
}

/// Highest-confidence candidate inside every prior range of `kind`.
pub fn filter_by_priors(
    candidates: &[DetectionCandidate],
    priors: &GeometricPriors,
    kind: ObjectKind,
) -> Option<DetectionCandidate> {
    let p = priors.for_kind(kind);
    candidates
        .iter()
        .filter(|c| p.accepts(c.measured_width, c.measured_height, c.measured_target_height))
        .min_by(|a, b| {
            b.confidence
                .partial_cmp(&a.confidence)
                .unwrap_or(Ordering::Equal)
                .then(a.hypothesis.cmp(&b.hypothesis))
        })
        .cloned()
}

/// Target centre, height and outward surface normal. The normal averages the
/// host surface normals sampled within 0.2 m of the measured point, taking
/// only surfaces facing the same way as the target.
pub fn estimate_target(
    world: &WorldState,
    detection: &DetectionCandidate,
) -> Result<TargetEstimate, PerceptionError> {
    let Hypothesis::Object(id) = detection.hypothesis else {
        return Err(PerceptionError::NotAnObject);
    };
    let obj = world.object(id).map_err(|_| PerceptionError::NotAnObject)?;
    let target = world.target_of(id).map_err(|_| PerceptionError::NotAnObject)?;
    let expected = Vec2::from_angle(target.current_normal(obj));
    let center = detection.measured_target_point;

    let mut sum = Vec2::ZERO;
    let mut samples = 0usize;
    for (a, b, n) in obj.host_segments() {
        if n.dot(expected) <= 0.5 {
            continue;
        }
        let len = a.distance(b);
        let steps = (len / SAMPLE_STEP).floor() as usize;
        for k in 0..=steps {
            let p = a.lerp(b, if steps == 0 { 0.0 } else { k as f64 / steps as f64 });
            if p.distance(center) <= SAMPLE_RADIUS {
                sum += n;
                samples += 1;
            }
        }
    }
    if samples < 2 {
        return Err(PerceptionError::DegenerateSurface);
    }
    Ok(TargetEstimate {
        center,
        height: detection.measured_target_height,
        normal: sum.angle(),
    })
}

/// Debounced hand-on-target detector; fires once the hand has been within
/// the thresholds for two consecutive calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandDetector {
    streak: u32,
}

impl HandDetector {
    pub const PLANAR_TOL: f64 = 0.08;
    pub const HEIGHT_TOL: f64 = 0.15;
    pub const DEBOUNCE: u32 = 2;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, hand: Vec2, hand_height: f64, target: &TargetEstimate) -> bool {
        let near = hand.distance(target.center) <= Self::PLANAR_TOL
            && (hand_height - target.height).abs() <= Self::HEIGHT_TOL;
        self.streak = if near { self.streak.saturating_add(1) } else { 0 };
        self.streak >= Self::DEBOUNCE
    }

    pub fn reset(&mut self) {
        self.streak = 0;
    }
}

pub fn detect_hand_on_target(
    detector: &mut HandDetector,
    hand: (f64, f64, f64),
    target: &TargetEstimate,
) -> bool {
    detector.update(Vec2::new(hand.0, hand.1), hand.2, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Range;
    use crate::rng::{stream, Stream};
    use crate::world::{
        Cell, ElevatorKinematics, GridMap, InteractionTarget, Kinematics, MainObject, Polygon,
        TargetKind, DoorKinematics,
    };
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn cand(id: u32, conf: f64, width: f64) -> DetectionCandidate {
        DetectionCandidate {
            hypothesis: Hypothesis::Object(ObjectId(id)),
            confidence: conf,
            measured_width: width,
            measured_height: 2.0,
            measured_target_height: 1.0,
            measured_target_point: Vec2::ZERO,
        }
    }

    /// 6 x 4 m room, door in a wall at x = 3 (hinge at y = 1.5, 1 m leaf).
    /// Optionally a second wall at x = 2 blocks the view from the west.
    fn door_world(blocker: bool) -> WorldState {
        let mut map = GridMap::new(120, 80, 0.05).unwrap();
        for row in 0..80 {
            let y = (row as f64 + 0.5) * 0.05;
            if !(1.5..2.5).contains(&y) {
                map.set((row, 60), Cell::Occupied);
            }
            if blocker {
                map.set((row, 40), Cell::Occupied);
            }
        }
        let door = MainObject::new(
            ObjectId(1),
            1.0,
            2.0,
            Kinematics::Door(DoorKinematics {
                hinge: Vec2::new(3.025, 1.5),
                closed_angle: PI / 2.0,
                leaf_length: 1.0,
                thickness: 0.04,
                swing: 1.0,
                max_angle: PI / 2.0,
            }),
        );
        let handle = InteractionTarget {
            owner: ObjectId(1),
            point: Vec2::new(3.005, 2.35),
            height: 1.0,
            normal: PI,
            kind: TargetKind::Handle,
        };
        WorldState::new(map, vec![door], vec![handle], vec![]).unwrap()
    }

    fn elevator_world() -> WorldState {
        // Wall along y = 2.0 (rows 40); gap from x = 2 to 3; hall is south.
        let mut map = GridMap::new(100, 80, 0.05).unwrap();
        for col in 0..100 {
            let x = (col as f64 + 0.5) * 0.05;
            if !(2.0..3.0).contains(&x) {
                map.set((40, col), Cell::Occupied);
            }
        }
        let e = MainObject::new(
            ObjectId(4),
            1.0,
            2.1,
            Kinematics::Elevator(ElevatorKinematics {
                gap: [Vec2::new(2.0, 2.0), Vec2::new(3.0, 2.0)],
                hall_normal: -PI / 2.0,
                panel_thickness: 0.05,
                cabin: Polygon::aabb_rect(Vec2::new(2.0, 2.1), Vec2::new(3.0, 3.5)),
                open_delay: 1.0,
                open_duration: 2.0,
                threshold_depth: 0.6,
                called_at: None,
            }),
        );
        let button = InteractionTarget {
            owner: ObjectId(4),
            point: Vec2::new(3.4, 2.0),
            height: 1.1,
            normal: -PI / 2.0,
            kind: TargetKind::CallButton,
        };
        WorldState::new(map, vec![e], vec![button], vec![]).unwrap()
    }

    #[test]
    fn noiseless_door_candidate_is_exact() {
        let w = door_world(false);
        let mut rng = stream(1, Stream::Perception);
        let c = sense_candidates(&w, &Pose2::new(1.0, 2.0, 0.0), &NoiseParams::zero(), &mut rng);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].hypothesis, Hypothesis::Object(ObjectId(1)));
        assert_eq!(c[0].confidence, 1.0);
        assert_eq!(c[0].measured_width, 1.0);
        assert_eq!(c[0].measured_height, 2.0);
        assert_eq!(c[0].measured_target_height, 1.0);
        assert_eq!(c[0].measured_target_point, Vec2::new(3.005, 2.35));
    }

    #[test]
    fn occluded_object_is_not_sensed() {
        let w = door_world(true);
        let mut rng = stream(1, Stream::Perception);
        let c = sense_candidates(&w, &Pose2::new(1.0, 2.0, 0.0), &NoiseParams::zero(), &mut rng);
        assert!(c.is_empty());
    }

    #[test]
    fn spurious_count_mean_matches_lambda() {
        let w = door_world(true);
        let noise = NoiseParams {
            lambda_fp: 2.0,
            ..NoiseParams::zero()
        };
        let n = 10_000u64;
        let total: usize = (0..n)
            .map(|seed| {
                let mut rng = stream(seed, Stream::Perception);
                sense_candidates(&w, &Pose2::new(1.0, 2.0, 0.0), &noise, &mut rng).len()
            })
            .sum();
        let mean = total as f64 / n as f64;
        assert!((1.9..=2.1).contains(&mean), "{mean}");
    }

    #[test]
    fn filter_examples() {
        let priors = GeometricPriors::default();
        let got = filter_by_priors(&[cand(1, 0.9, 3.0), cand(2, 0.7, 0.9)], &priors, ObjectKind::Door);
        assert_eq!(got.unwrap().confidence, 0.7);
        assert!(filter_by_priors(&[], &priors, ObjectKind::Door).is_none());
        let got = filter_by_priors(&[cand(5, 0.8, 0.9), cand(2, 0.8, 0.9)], &priors, ObjectKind::Door);
        assert_eq!(got.unwrap().hypothesis, Hypothesis::Object(ObjectId(2)));
    }

    #[test]
    fn wall_facing_plus_x_has_zero_normal() {
        let mut map = GridMap::new(80, 100, 0.05).unwrap();
        for row in 0..100 {
            let y = (row as f64 + 0.5) * 0.05;
            if !(2.0..3.0).contains(&y) {
                map.set((row, 39), Cell::Occupied);
            }
        }
        let e = MainObject::new(
            ObjectId(4),
            1.0,
            2.1,
            Kinematics::Elevator(ElevatorKinematics {
                gap: [Vec2::new(2.0, 3.0), Vec2::new(2.0, 2.0)],
                hall_normal: 0.0,
                panel_thickness: 0.05,
                cabin: Polygon::aabb_rect(Vec2::new(0.5, 2.0), Vec2::new(1.9, 3.0)),
                open_delay: 1.0,
                open_duration: 2.0,
                threshold_depth: 0.6,
                called_at: None,
            }),
        );
        let t = InteractionTarget {
            owner: ObjectId(4),
            point: Vec2::new(2.0, 3.4),
            height: 1.1,
            normal: 0.0,
            kind: TargetKind::CallButton,
        };
        let w = WorldState::new(map, vec![e], vec![t], vec![]).unwrap();
        let mut rng = stream(3, Stream::Perception);
        let c = sense_candidates(&w, &Pose2::new(3.5, 3.4, PI), &NoiseParams::zero(), &mut rng);
        let est = estimate_target(&w, &c[0]).unwrap();
        assert_eq!(est.normal, 0.0);
    }

    #[test]
    fn rotated_leaf_rotates_normal() {
        let mut w = door_world(false);
        let closed = estimate_target(&w, &DetectionCandidate {
            measured_target_point: w.target_point(ObjectId(1)).unwrap(),
            ..cand(1, 1.0, 1.0)
        })
        .unwrap();
        w.set_object_state(ObjectId(1), PI / 6.0).unwrap();
        let open = estimate_target(&w, &DetectionCandidate {
            measured_target_point: w.target_point(ObjectId(1)).unwrap(),
            ..cand(1, 1.0, 1.0)
        })
        .unwrap();
        let diff = crate::world::wrap_angle(open.normal - closed.normal);
        assert!((diff - PI / 6.0).abs() < 1e-12, "{diff}");
    }

    #[test]
    fn noiseless_button_height_is_exact() {
        let w = elevator_world();
        let mut rng = stream(2, Stream::Perception);
        let c = sense_candidates(&w, &Pose2::new(3.4, 0.8, PI / 2.0), &NoiseParams::zero(), &mut rng);
        let est = estimate_target(&w, &c[0]).unwrap();
        assert_eq!(est.height, 1.1);
        assert!((est.normal + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_surface_far_from_point() {
        let w = door_world(false);
        let det = DetectionCandidate {
            measured_target_point: Vec2::new(5.0, 0.5),
            ..cand(1, 1.0, 1.0)
        };
        assert_eq!(estimate_target(&w, &det), Err(PerceptionError::DegenerateSurface));
        let spur = DetectionCandidate {
            hypothesis: Hypothesis::Spurious(0),
            ..det
        };
        assert_eq!(estimate_target(&w, &spur), Err(PerceptionError::NotAnObject));
    }

    #[test]
    fn hand_detector_debounce() {
        let t = TargetEstimate {
            center: Vec2::new(1.0, 1.0),
            height: 1.0,
            normal: 0.0,
        };
        let mut d = HandDetector::new();
        assert!(!detect_hand_on_target(&mut d, (1.0, 1.0, 1.0), &t));
        assert!(detect_hand_on_target(&mut d, (1.0, 1.0, 1.0), &t));

        let mut d = HandDetector::new();
        assert!((0..100).all(|_| !detect_hand_on_target(&mut d, (1.2, 1.0, 1.0), &t)));

        let mut d = HandDetector::new();
        for i in 0..100 {
            let hand = if i % 2 == 0 { (1.0, 1.0, 1.0) } else { (2.0, 1.0, 1.0) };
            assert!(!detect_hand_on_target(&mut d, hand, &t));
        }
    }

    #[test]
    fn noiseless_hypothesis_is_true_object_on_pose_lattice() {
        let w = door_world(false);
        let priors = GeometricPriors::default();
        let mut checked = 0;
        for ix in 2..60 {
            for iy in 2..78 {
                let p = Vec2::new(ix as f64 * 0.05 + 0.025, iy as f64 * 0.05 + 0.025);
                if ix % 4 != 0 || iy % 4 != 0 || w.occupancy().nearest_occupied_distance(p).unwrap() < 0.35 {
                    continue;
                }
                if !line_of_sight(&w, ObjectId(1), p, 6.0) {
                    continue;
                }
                let mut rng = stream(ix * 100 + iy, Stream::Perception);
                let c = sense_candidates(&w, &Pose2::from_position(p, 0.0), &NoiseParams::zero(), &mut rng);
                let got = filter_by_priors(&c, &priors, ObjectKind::Door).unwrap();
                assert_eq!(got.hypothesis, Hypothesis::Object(ObjectId(1)));
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    fn range() -> impl Strategy<Value = Range> {
        (0.0f64..3.0, 0.0f64..1.5).prop_map(|(lo, span)| Range::new(lo, lo + span))
    }

    proptest! {
        #[test]
        fn filtered_output_satisfies_priors(
            w in range(), h in range(), th in range(),
            cands in prop::collection::vec((0u32..8, 0.0f64..1.0, 0.0f64..3.0, 0.0f64..3.0, 0.0f64..2.0), 0..12),
        ) {
            let kp = crate::params::KindPriors { width: w, height: h, target_height: th };
            let priors = GeometricPriors { door: kp, ..GeometricPriors::default() };
            let list: Vec<_> = cands.iter().map(|&(id, c, mw, mh, mt)| DetectionCandidate {
                hypothesis: Hypothesis::Object(ObjectId(id)),
                confidence: c,
                measured_width: mw,
                measured_height: mh,
                measured_target_height: mt,
                measured_target_point: Vec2::ZERO,
            }).collect();
            if let Some(best) = filter_by_priors(&list, &priors, ObjectKind::Door) {
                prop_assert!(kp.accepts(best.measured_width, best.measured_height, best.measured_target_height));
                for c in &list {
                    if kp.accepts(c.measured_width, c.measured_height, c.measured_target_height) {
                        prop_assert!(c.confidence <= best.confidence);
                    }
                }
            } else {
                prop_assert!(list.iter().all(|c| !kp.accepts(c.measured_width, c.measured_height, c.measured_target_height)));
            }
        }

        #[test]
        fn hand_detector_stays_true_while_static(offset in 0.0f64..0.08, dh in -0.15f64..0.15, extra in 0usize..20) {
            let t = TargetEstimate { center: Vec2::new(0.0, 0.0), height: 1.0, normal: 0.0 };
            let mut d = HandDetector::new();
            let hand = (offset, 0.0, 1.0 + dh);
            let mut fired = false;
            for _ in 0..(2 + extra) {
                let now = detect_hand_on_target(&mut d, hand, &t);
                prop_assert!(!fired || now);
                fired |= now;
            }
            prop_assert!(fired);
        }
    }
}
