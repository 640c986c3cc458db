#pragma polca fold F INI v a
for (int i = 0; i < N; i++)
    a = F(a, v[i]);
