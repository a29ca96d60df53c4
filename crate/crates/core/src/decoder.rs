/// A latent-to-image map that can be evaluated in `f64` and linearised.
///
/// Implemented by the nonlinear [`ReferenceDecoder`](crate::diffusion::ReferenceDecoder)
/// and the fitted [`AffineDecoder`](crate::linear::AffineDecoder), so audits can
/// treat either one as "the" decoder.
pub trait LatentDecoder {
    fn latent_dims(&self) -> &[usize];
    fn image_dims(&self) -> &[usize];

    fn latent_len(&self) -> usize {
        self.latent_dims().iter().product()
    }

    fn image_len(&self) -> usize {
        self.image_dims().iter().product()
    }

    /// Evaluates the decoder on a flattened latent.
    fn decode_f64(&self, z: &[f64]) -> Vec<f64>;

    /// Jacobian-vector product `J(z) v`.
    fn jvp(&self, z: &[f64], v: &[f64]) -> Vec<f64>;

    /// Decodes `n` latents stored back to back.
    fn decode_batch_f64(&self, zs: &[f64], n: usize) -> Vec<f64> {
        let d_z = self.latent_len();
        assert_eq!(zs.len(), n * d_z);
        zs.chunks_exact(d_z).flat_map(|z| self.decode_f64(z)).collect()
    }
}
