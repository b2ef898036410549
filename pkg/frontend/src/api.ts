import type { MapMode, NextPair, Progress, VoteRecord, Winner } from "./types.js";

const API_BASE = "/api";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

async function getJson<T>(url: string): Promise<T> {
  const response = await fetch(url);
  if (!response.ok) {
    throw new ApiError(response.status, `GET ${url} failed with ${response.status}`);
  }
  return response.json();
}

export function fetchNextPair(rater: string): Promise<NextPair> {
  return getJson(`${API_BASE}/pairs/next?${new URLSearchParams({ rater })}`);
}

export function fetchProgress(rater: string): Promise<Progress> {
  return getJson(`${API_BASE}/progress?${new URLSearchParams({ rater })}`);
}

export async function postVote(pairId: number, winner: Winner, rater: string): Promise<VoteRecord> {
  const response = await fetch(`${API_BASE}/votes`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ pair_id: pairId, winner, rater }),
  });
  if (response.status !== 201) {
    throw new ApiError(response.status, `vote on pair ${pairId} rejected with ${response.status}`);
  }
  return response.json();
}

export function mapUrl(city: string, mode: MapMode): string {
  return `${API_BASE}/maps/${encodeURIComponent(city)}/${mode}`;
}

export function spectrumUrl(mode: MapMode): string {
  return `${API_BASE}/spectrum/${mode}`;
}

/** The server must confirm the PNG exists before we point an <img> at it,
 * so a missing artifact can be reported instead of a broken image. */
export async function imageAvailable(url: string): Promise<boolean> {
  const response = await fetch(url);
  if (response.status === 404) return false;
  if (!response.ok) throw new ApiError(response.status, `GET ${url} failed with ${response.status}`);
  return true;
}
