//! Two-layer teacher-student model in the online-learning limit.
//!
//! A student `ŷ = Σᵢ hᵢ·φ(Wᵢ·x/√d)` learns from teachers of the same form
//! with fresh Gaussian inputs at every step. In the limit of large input
//! dimension the generalisation error depends on the weights only through
//! the overlaps `Q = WWᵀ/d`, `R = W·W_Tᵀ/d`, `T = W_T·W_Tᵀ/d` and the
//! readouts, whose evolution in the time `τ = steps/d` closes into a set of
//! ODEs built from three Gaussian averages of the scaled error function.

pub mod activation;
pub mod averages;
pub mod network;
pub mod ode;
pub mod order_params;

pub use activation::{phi, phi_prime, Activation};
pub use averages::{avg_4point, avg_phi_phi, avg_phiprime_x_phi};
pub use network::{
    gaussian_input, generate_teachers, sgd_step, teacher_output, StudentNetwork, Task,
    TeacherEnsemble,
};
pub use ode::{integrate, ode_rhs, Segment, Series, SeriesPoint};
pub use order_params::{generalisation_error, generalisation_error_for, OrderParams};
