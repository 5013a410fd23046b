/** SVG rendering helpers.  Pure string builders so they are testable without
 * a DOM; the page shell just injects the results. */

import { CandidateEntry, CorrespondenceLink, Minutia } from "./types.js";

const RAY_LEN = 12; // orientation ray length in image pixels

export function renderMinutiae(minutiae: Minutia[]): string {
  const parts = minutiae.map((m, i) => {
    const x2 = m.x + RAY_LEN * Math.cos(m.theta);
    const y2 = m.y + RAY_LEN * Math.sin(m.theta);
    const cls = m.selected ? "minutia selected" : "minutia";
    return (
      `<g class="${cls}" data-index="${i}">` +
      `<circle cx="${m.x.toFixed(1)}" cy="${m.y.toFixed(1)}" r="4"/>` +
      `<line x1="${m.x.toFixed(1)}" y1="${m.y.toFixed(1)}" ` +
      `x2="${x2.toFixed(1)}" y2="${y2.toFixed(1)}"/></g>`
    );
  });
  return `<g class="minutiae">${parts.join("")}</g>`;
}

/** Correspondence lines between the latent pane and a reference pane shifted
 * right by paneOffset (Fig-7 style side-by-side layout). */
export function renderOverlay(links: CorrespondenceLink[], paneOffset: number): string {
  const lines = links.map(
    (l) =>
      `<line class="link" x1="${l.latent.x.toFixed(1)}" y1="${l.latent.y.toFixed(1)}" ` +
      `x2="${(l.reference.x + paneOffset).toFixed(1)}" y2="${l.reference.y.toFixed(1)}" ` +
      `data-sim="${l.similarity.toFixed(4)}"/>`,
  );
  return `<g class="links">${lines.join("")}</g>`;
}

export function renderCandidateRows(entries: CandidateEntry[]): string[] {
  return entries.map((e, i) => {
    const zero = e.fusedScore === 0 ? ` <span class="badge zero">0</span>` : "";
    const parts = e.minutiaeScores.map((s) => s.toFixed(3)).join(" / ");
    return (
      `<tr class="candidate" data-id="${e.referenceId}">` +
      `<td>${i + 1}</td><td>${e.referenceId}</td>` +
      `<td>${e.fusedScore.toFixed(4)}${zero}</td>` +
      `<td>${parts}</td><td>${e.textureScore.toFixed(3)}</td></tr>`
    );
  });
}

export function countRendered(svg: string, cls: string): number {
  return (svg.match(new RegExp(`class="${cls}"`, "g")) ?? []).length;
}
