//! Turn-then-drive robot plant and a point integrator for fish.

use serde::{Deserialize, Serialize};

use crate::controller::MotionCommand;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose, Vec2};
use crate::params::{ArenaSpec, ControllerParams};

/// Forward motion is suppressed while the heading error exceeds this.
pub const DRIVE_GATE: f64 = std::f64::consts::PI / 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotMotionParams {
    /// rad/s
    pub max_turn_rate: f64,
    /// cm/s²
    pub accel: f64,
    /// cm/s²
    pub decel: f64,
    /// cm
    pub arrival_radius: f64,
}

impl Default for RobotMotionParams {
    fn default() -> Self {
        Self {
            max_turn_rate: std::f64::consts::TAU,
            accel: 60.0,
            decel: 60.0,
            arrival_radius: 1.0,
        }
    }
}

impl RobotMotionParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.max_turn_rate, self.accel, self.decel, self.arrival_radius];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "robot motion parameters must be positive".into(),
            ))
        }
    }
}

/// One plant step toward `cmd.target`. Returns the new pose and forward speed.
pub fn advance_robot(
    pose: Pose,
    current_speed: f64,
    cmd: &MotionCommand,
    dt: f64,
    motion: &RobotMotionParams,
    controller: &ControllerParams,
    arena: &ArenaSpec,
) -> (Pose, f64) {
    let to_target = cmd.target - pose.position;
    let dist = to_target.norm();
    if dist <= motion.arrival_radius {
        return (pose, 0.0);
    }

    let error = wrap_angle(to_target.angle() - pose.heading);
    let max_turn = motion.max_turn_rate * dt;
    let heading = wrap_angle(pose.heading + error.clamp(-max_turn, max_turn));
    let remaining_error = wrap_angle(to_target.angle() - heading).abs();

    let speed = if remaining_error > DRIVE_GATE {
        (current_speed - motion.decel * dt).max(0.0)
    } else {
        let cruise = (cmd.speed_factor * controller.speed_unit)
            .min(controller.max_speed)
            .max(0.0);
        // the floor keeps the final creep from stalling just outside the arrival radius
        let braking = (2.0 * motion.decel * (dist - motion.arrival_radius).max(0.0))
            .sqrt()
            .max(motion.decel * dt);
        (current_speed + motion.accel * dt).min(cruise).min(braking)
    };

    // never overshoot the target within one step
    let travel = (speed * dt).min(dist);
    let moved = pose.position + Vec2::from_angle(heading) * travel;
    let clamped = arena.clamp(moved);
    let speed = if clamped != moved { 0.0 } else { speed };
    (Pose::new(clamped, heading), speed)
}

/// Euler step clamped to the arena. Fish models reflect their own heading at walls.
pub fn advance_point(pos: Vec2, velocity: Vec2, dt: f64, arena: &ArenaSpec) -> Vec2 {
    arena.clamp(pos + velocity * dt)
}

/// Velocity after reflecting the components that would carry `pos` out of the arena.
pub fn reflect_velocity(pos: Vec2, velocity: Vec2, dt: f64, arena: &ArenaSpec) -> Vec2 {
    let next = pos + velocity * dt;
    let mut v = velocity;
    if next.x < 0.0 || next.x > arena.side {
        v.x = -v.x;
    }
    if next.y < 0.0 || next.y > arena.side {
        v.y = -v.y;
    }
    v
}

/// Drop the velocity components that would leave the arena, so motion
/// pressed into a wall slides along it.
pub fn slide_velocity(pos: Vec2, velocity: Vec2, dt: f64, arena: &ArenaSpec) -> Vec2 {
    let next = pos + velocity * dt;
    let mut v = velocity;
    if next.x < 0.0 || next.x > arena.side {
        v.x = 0.0;
    }
    if next.y < 0.0 || next.y > arena.side {
        v.y = 0.0;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn step(pose: Pose, speed: f64, target: Vec2, factor: f64) -> (Pose, f64) {
        advance_robot(
            pose,
            speed,
            &MotionCommand {
                target,
                speed_factor: factor,
            },
            0.04,
            &RobotMotionParams::default(),
            &ControllerParams::default(),
            &ArenaSpec::default(),
        )
    }

    #[test]
    fn at_target_no_motion() {
        let pose = Pose::new(Vec2::new(50.0, 50.0), 0.3);
        let (next, speed) = step(pose, 10.0, Vec2::new(50.5, 50.0), 1.0);
        assert_eq!(next, pose);
        assert_eq!(speed, 0.0);
    }

    #[test]
    fn turns_before_driving() {
        let pose = Pose::new(Vec2::new(50.0, 50.0), PI);
        let (next, speed) = step(pose, 0.0, Vec2::new(80.0, 50.0), 1.0);
        let turned = wrap_angle(next.heading - pose.heading).abs();
        assert_abs_diff_eq!(turned, 2.0 * PI * 0.04, epsilon = 1e-12);
        assert_eq!(next.position, pose.position);
        assert_eq!(speed, 0.0);
    }

    #[test]
    fn terminal_speed_is_thirty() {
        let mut pose = Pose::new(Vec2::new(5.0, 50.0), 0.0);
        let mut speed = 0.0;
        let mut top: f64 = 0.0;
        for _ in 0..60 {
            (pose, speed) = step(pose, speed, Vec2::new(99.0, 50.0), 1.2);
            top = top.max(speed);
        }
        assert_abs_diff_eq!(top, 30.0, epsilon = 1e-9);
    }

    #[test]
    fn advance_point_examples() {
        let a = ArenaSpec::default();
        assert_eq!(
            advance_point(Vec2::new(3.0, 4.0), Vec2::ZERO, 0.04, &a),
            Vec2::new(3.0, 4.0)
        );
        let p = advance_point(Vec2::new(50.0, 50.0), Vec2::new(25.0, 0.0), 0.04, &a);
        assert_abs_diff_eq!(p.x, 51.0, epsilon = 1e-12);
        assert_eq!(p.y, 50.0);
        assert_eq!(
            advance_point(Vec2::new(99.5, 50.0), Vec2::new(25.0, 0.0), 0.04, &a),
            Vec2::new(100.0, 50.0)
        );
    }

    #[test]
    fn reflection_flips_outgoing_component() {
        let a = ArenaSpec::default();
        let v = reflect_velocity(Vec2::new(99.5, 50.0), Vec2::new(25.0, 3.0), 0.04, &a);
        assert_eq!(v, Vec2::new(-25.0, 3.0));
    }

    #[test]
    fn sliding_drops_outgoing_component() {
        let a = ArenaSpec::default();
        let v = slide_velocity(Vec2::new(0.2, 0.3), Vec2::new(-25.0, -3.0), 0.04, &a);
        assert_eq!(v, Vec2::new(0.0, -3.0));
        let v = slide_velocity(Vec2::new(0.2, 0.1), Vec2::new(-25.0, -3.0), 0.04, &a);
        assert_eq!(v, Vec2::new(0.0, 0.0));
        let v = slide_velocity(Vec2::new(99.5, 50.0), Vec2::new(25.0, 3.0), 0.04, &a);
        assert_eq!(v, Vec2::new(0.0, 3.0));
    }

    proptest! {
        #[test]
        fn speed_and_position_bounds(
            x in 0.0..100.0f64, y in 0.0..100.0f64, h in -PI..PI,
            tx in -20.0..120.0f64, ty in -20.0..120.0f64,
            factor in 0.0..1.5f64, steps in 1usize..200,
        ) {
            let mut pose = Pose::new(Vec2::new(x, y), h);
            let mut speed = 0.0;
            for _ in 0..steps {
                let (next, s) = step(pose, speed, Vec2::new(tx, ty), factor);
                prop_assert!(s <= 30.0 + 1e-12);
                prop_assert!(s <= factor * 25.0 + 60.0 * 0.04 + 1e-9);
                prop_assert!(ArenaSpec::default().contains(next.position));
                pose = next;
                speed = s;
            }
        }

        #[test]
        fn reaches_reachable_target(
            x in 5.0..95.0f64, y in 5.0..95.0f64, h in -PI..PI,
            tx in 5.0..95.0f64, ty in 5.0..95.0f64, factor in 0.2..1.2f64,
        ) {
            let target = Vec2::new(tx, ty);
            let mut pose = Pose::new(Vec2::new(x, y), h);
            let mut speed = 0.0;
            let bound = (150.0 / (factor * 25.0).min(30.0) / 0.04) as usize + 200;
            let mut arrived = false;
            for _ in 0..bound {
                (pose, speed) = step(pose, speed, target, factor);
                if pose.position.distance(target) <= 1.0 + 1e-9 {
                    arrived = true;
                    break;
                }
            }
            prop_assert!(arrived);
        }
    }
}
