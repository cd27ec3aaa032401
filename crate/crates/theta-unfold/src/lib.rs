pub mod exactalg;
pub mod formed;
pub mod orbits;
pub mod transfer;
pub mod weil;
pub mod unfold;
pub mod cli;
