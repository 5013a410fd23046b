/** Thin client for the search service; the UI touches server state only
 * through these four endpoints. */

import { CandidateEntry, CaseData, Minutia } from "./types.js";

export class ServiceError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = typeof fetch;

export class ServiceClient {
  constructor(private baseUrl: string, private fetchImpl: FetchLike = fetch) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request(path: string, init?: RequestInit): Promise<any> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!res.ok) {
      let detail = res.statusText;
      try {
        detail = (await res.json()).detail ?? detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ServiceError(res.status, detail);
    }
    return res.json();
  }

  async getCase(id: string): Promise<CaseData> {
    const body = await this.request(`/cases/${id}`);
    return {
      id: body.id,
      version: body.version,
      height: body.height,
      width: body.width,
      imagePgmB64: body.image_pgm_b64,
      minutiae: body.minutiae.map((m: any) => ({ x: m.x, y: m.y, theta: m.theta })),
      fields: {
        blockSize: body.fields.block_size,
        orientation: body.fields.orientation,
        roi: body.fields.roi,
      },
    };
  }

  async putMinutiae(
    id: string,
    version: number,
    minutiae: Minutia[],
  ): Promise<{ version: number; count: number }> {
    const body = await this.request(`/cases/${id}/minutiae`, {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        version,
        minutiae: minutiae.map((m) => ({ x: m.x, y: m.y, theta: m.theta })),
      }),
    });
    return { version: body.version, count: body.count };
  }

  async search(id: string, topk?: number): Promise<CandidateEntry[]> {
    const query = topk === undefined ? "" : `?topk=${topk}`;
    const body = await this.request(`/cases/${id}/search${query}`, {
      method: "POST",
    });
    return body.entries.map((e: any) => ({
      referenceId: e.reference_id,
      fusedScore: e.fused_score,
      minutiaeScores: e.minutiae_scores,
      textureScore: e.texture_score,
      correspondences: e.correspondences,
    }));
  }

  async referenceImage(id: string): Promise<string> {
    const body = await this.request(`/references/${id}/image`);
    return body.image_pgm_b64;
  }
}
