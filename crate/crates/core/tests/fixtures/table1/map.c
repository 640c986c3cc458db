#pragma polca map F v w
for (int i = 0; i < N; i++)
    w[i] = F(v[i]);
