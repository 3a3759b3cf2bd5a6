pub mod channels;
pub mod error;
pub mod experiments;
pub mod hamiltonians;
pub mod markov2;
pub mod matcore;
pub mod observables;
pub mod perturbation;
