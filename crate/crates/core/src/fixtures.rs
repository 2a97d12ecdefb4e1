//! Small hand-drawn instances with known clearing behaviour.

use crate::graph::{BloodType::*, CompatibilityGraph, Profile, Vertex};

/// Three pairs: 1 (A donor / B patient), 2 (B / A), 3 (A / B).
/// Only the 2-cycles (1,2) and (2,3) exist, so one B patient stays unmatched.
pub fn fig1_vertices(p1: Profile, p2: Profile, p3: Profile) -> Vec<Vertex> {
    vec![
        Vertex::pair(1, A, B, p1),
        Vertex::pair(2, B, A, p2),
        Vertex::pair(3, A, B, p3),
    ]
}

pub fn fig1(p1: Profile, p2: Profile, p3: Profile) -> CompatibilityGraph {
    CompatibilityGraph::new(fig1_vertices(p1, p2, p3), [(1, 2), (2, 1), (2, 3), (3, 2)])
        .expect("fixture is valid")
}

/// Four pairs (donor / patient): 1 AB/O, 2 O/AB, 3 AB/A, 4 A/O, with the
/// edges drawn in the classic maximal-versus-maximum example. The 3-cycle
/// (2,4,3) matches more patients than the 2-cycle (1,2).
pub fn fig2(profiles: [Profile; 4]) -> CompatibilityGraph {
    let vertices = vec![
        Vertex::pair(1, AB, O, profiles[0]),
        Vertex::pair(2, O, AB, profiles[1]),
        Vertex::pair(3, AB, A, profiles[2]),
        Vertex::pair(4, A, O, profiles[3]),
    ];
    CompatibilityGraph::new(vertices, [(1, 2), (2, 1), (2, 3), (3, 2), (2, 4), (4, 3)])
        .expect("fixture is valid")
}
