/** Shared domain types for the examiner workbench. */

export interface Minutia {
  x: number;
  y: number;
  theta: number; // [0, 2*pi)
  selected?: boolean;
}

export interface FieldsView {
  blockSize: number;
  orientation: number[][];
  roi: number[][];
}

export interface CaseData {
  id: string;
  version: number;
  height: number;
  width: number;
  imagePgmB64: string;
  minutiae: Minutia[];
  fields: FieldsView;
}

export interface CorrespondenceLink {
  latent: { x: number; y: number };
  reference: { x: number; y: number };
  similarity: number;
}

export interface CandidateEntry {
  referenceId: string;
  fusedScore: number;
  minutiaeScores: number[];
  textureScore: number;
  correspondences: CorrespondenceLink[];
}

export const TWO_PI = 2 * Math.PI;

/** Normalize an angle into [0, 2*pi); drags can produce anything. */
export function wrapTheta(theta: number): number {
  let t = theta % TWO_PI;
  if (t < 0) t += TWO_PI;
  // -1e-18 % 2pi can round to exactly 2pi
  return t >= TWO_PI ? 0 : t;
}
