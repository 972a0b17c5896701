//! The checked-in frame-569 record must survive a parse/serialize cycle
//! byte for byte, with every field preserved bit-exactly.

use std::path::Path;

use drivevla::dataset::{emit_jsonl, read_jsonl, overlay_geometry};

fn fixture_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/frame_0569.jsonl")
}

#[test]
fn frame_569_reserializes_to_its_input() {
    let path = fixture_path();
    let records = read_jsonl(&path).unwrap();
    assert_eq!(records.len(), 1);
    let r = &records[0];

    assert_eq!(r.frame_id, 569);
    assert_eq!(r.image_path, "images/2022-07-08--11-37-27--5_first/0569.png");
    assert_eq!(r.v_ego, 7.43082332611084);
    assert_eq!(r.v_ego_raw, 7.4395833015441895);
    assert_eq!(r.a_ego, 0.6044138669967651);
    assert_eq!(r.steering_angle_deg, 0.6073870658874512);
    assert_eq!(r.steering_torque, 69.0);
    assert_eq!(r.brake, 0.0);
    assert!(!r.brake_pressed);
    assert_eq!(r.gas, 0.20499999821186066);
    assert!(r.gas_pressed);
    assert!(!r.door_open && !r.seatbelt_unlatched);
    assert_eq!(r.gear_shifter, "drive");
    assert!(!r.left_blinker && !r.right_blinker);
    assert_eq!(
        r.orientations_calib,
        Some([2.9467956252753775, 0.9174552319868815, 2.2181786819453384])
    );
    assert_eq!(
        r.orientations_ecef,
        [2.9243210649189977, 0.9224135550861058, 2.1900513923432348]
    );
    assert_eq!(
        r.orientations_ned,
        [-0.013463193567253392, 0.006326533926443111, -2.990125370637735]
    );
    assert_eq!(r.positions_ecef, [-3959574.486029379, 3328427.354910454, 3719065.7393601397]);
    assert_eq!(
        r.velocities_calib,
        Some([7.317097759615114, 0.003242519329502727, 0.005369323447773883])
    );
    assert_eq!(r.velocities_ecef, [-2.6767882666706004, 3.547338396353873, -5.813015899212604]);
    assert_eq!(
        r.accelerations_calib,
        Some([0.4734579094803297, 0.08559864698994124, -0.13132037594775653])
    );
    assert_eq!(
        r.accelerations_device,
        Some([0.4736293760658642, 0.07819260264673351, -0.13526157094253702])
    );
    assert_eq!(
        r.angular_velocities_calib,
        Some([0.011550541795216845, 0.012243857869171634, -0.007753300486330907])
    );
    assert_eq!(
        r.angular_velocities_device,
        Some([0.011675888068301523, 0.01206267096884485, -0.007848971055415363])
    );
    assert_eq!(r.timestamp, 1657248173200);
    let extrinsic = r.extrinsic_matrix.unwrap();
    assert_eq!(
        extrinsic[0],
        [-0.015688330416257182, -0.9998769191404183, 0.00012959444326649344, 0.0]
    );
    assert_eq!(
        extrinsic[1],
        [-0.008260370686184616, 2.879912020664621e-21, -0.9999658837914467, 1.2200000286102295]
    );
    assert_eq!(
        extrinsic[2],
        [0.9998428078989188, -0.01568886620613436, -0.008259354077745229, 0.0]
    );
    assert_eq!(extrinsic[3], [0.0, 0.0, 0.0, 1.0]);
    assert_eq!(
        r.intrinsic_matrix,
        Some([[2648.0, 0.0, 964.0], [0.0, 2648.0, 604.0], [0.0, 0.0, 1.0]])
    );
    assert_eq!(r.trajectory_count, 60);
    assert_eq!(r.trajectory.len(), 60);
    assert_eq!(r.trajectory[0], [0.0, -0.0, 0.0]);
    assert!(r.trajectory[0][1].is_sign_negative(), "-0.0 must keep its sign bit");
    assert_eq!(
        r.trajectory[7],
        [2.2367286927600376, 0.021314714278469867, 0.011369742248091336]
    );
    assert_eq!(
        r.trajectory[26],
        [9.301852576186251, 0.1417775525229876, 0.07520389298492622]
    );
    assert_eq!(
        r.trajectory[59],
        [20.998125620182435, 0.5860796022647292, 0.1657656398148593]
    );

    // Byte-for-byte round trip.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.jsonl");
    emit_jsonl(&records, &out).unwrap();
    let original = std::fs::read(&path).unwrap();
    let reserialized = std::fs::read(&out).unwrap();
    assert_eq!(original, reserialized, "fixture must re-serialize to its input bytes");

    // The serialized form keeps the exact published decimal literals.
    let text = String::from_utf8(reserialized).unwrap();
    for literal in [
        "\"vEgo\":7.43082332611084",
        "2.879912020664621e-21",
        "[0.0,-0.0,0.0]",
        "20.998125620182435",
        "-3959574.486029379",
    ] {
        assert!(text.contains(literal), "missing literal {literal}");
    }
}

#[test]
fn frame_569_projects_into_the_image() {
    let records = read_jsonl(&fixture_path()).unwrap();
    let points = overlay_geometry(&records[0]).unwrap();
    assert!(points.len() > 50);
    // Row coordinates fall monotonically toward the horizon; the far end
    // converges near the principal point (964, 604).
    assert!(points.windows(2).all(|w| w[0].1 > w[1].1));
    let in_frame = points
        .iter()
        .filter(|(u, v)| (0.0..1928.0).contains(u) && (0.0..1208.0).contains(v))
        .count();
    assert!(in_frame > 40, "only {in_frame} points land inside the image");
    let (u_last, v_last) = points[points.len() - 1];
    assert!((u_last - 964.0).abs() < 200.0, "u={u_last}");
    assert!(v_last > 604.0 && v_last < 1000.0, "v={v_last}");
}
